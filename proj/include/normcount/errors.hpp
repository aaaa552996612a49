#pragma once

#include <stdexcept>
#include <string>

namespace normcount {

// code is the error name; budget errors map to exit code 3, the rest to 2
struct Error : std::runtime_error {
    std::string code;
    bool budget;
    Error(std::string c, const std::string& msg, bool b = false)
        : std::runtime_error(c + ": " + msg), code(std::move(c)), budget(b) {}
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
    throw Error(code, msg, code == "TooLarge" || code == "Budget");
}

}  // namespace normcount
