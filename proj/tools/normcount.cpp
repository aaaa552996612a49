#include <CLI11.hpp>

#include <boost/version.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "normcount/counting.hpp"
#include "normcount/descent.hpp"

using namespace normcount;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Common {
    std::string spec, out, csv;
    int threads = 0;
    double budget = 2e10;
    std::uint64_t seed = 1;
};

struct CountArgs {
    i64 V = 21, H0 = 3, Q = 0, M = 2, k_cut = 0;
    double G = 4;
    std::string u = "1,0.1,0.1,0.1", v = "1,0,0,0", w = "1,0,0,0";
    size_t samples = 32;
    int table_res = 256, table_k = 64;
    bool no_bilinear = false;
};

std::string fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << h;
    return o.str();
}

std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream o;
    o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return o.str();
}

std::vector<double> parse_vec(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            fail("BadFlag", "not a number list: " + s);
        }
    }
    return out;
}

std::vector<i64> parse_ints(const std::string& s) {
    std::vector<i64> out;
    for (double d : parse_vec(s)) out.push_back(static_cast<i64>(d));
    return out;
}

Rat parse_rat(const std::string& s) {
    try {
        return rat_from_string(s);
    } catch (const std::exception&) {
        fail("BadFlag", "not a rational: " + s);
    }
}

int thread_count(int flag) {
    if (flag > 0) return flag;
    if (const char* e = std::getenv("NORMCOUNT_THREADS")) {
        int t = std::atoi(e);
        if (t > 0) return t;
    }
    return 1;
}

FieldSpec load_spec(const std::string& path) { return path.empty() ? zeta8_spec() : load_field_spec(path); }

class Runner {
public:
    Runner(std::string cmd, const Common& c) : cmd_(std::move(cmd)), c_(c), t0_(std::chrono::steady_clock::now()), started_(utc_now()) {}

    json manifest(const FieldSpec& spec, json params) const {
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        return {{"command", cmd_},
                {"field_spec_hash", fnv1a(field_spec_json(spec).dump())},
                {"field_spec", field_spec_json(spec)},
                {"parameters", std::move(params)},
                {"seed", c_.seed},
                {"threads", thread_count(c_.threads)},
                {"versions", {{"normcount", kVersion}, {"boost", BOOST_LIB_VERSION}, {"compiler", __VERSION__}}},
                {"wall_clock", {{"started", started_}, {"seconds", secs}}}};
    }

    void emit(json report, const FieldSpec& spec, json params) const {
        report["manifest"] = manifest(spec, std::move(params));
        std::string text = report.dump(2) + "\n";
        if (c_.out.empty()) {
            std::cout << text;
            return;
        }
        std::ofstream f(c_.out);
        if (!f) fail("BadFlag", "cannot write " + c_.out);
        f << text;
    }

    void emit_csv(const std::string& table) const {
        if (c_.csv.empty()) return;
        std::ofstream f(c_.csv);
        if (!f) fail("BadFlag", "cannot write " + c_.csv);
        f << table;
    }

private:
    std::string cmd_;
    const Common& c_;
    std::chrono::steady_clock::time_point t0_;
    std::string started_;
};

json count_params(const CountArgs& a, const Common& c) {
    return {{"V", a.V}, {"H0", a.H0}, {"G", a.G}, {"Q", a.Q}, {"k_cut", a.k_cut}, {"M", a.M}, {"u", a.u}, {"v", a.v},
            {"w", a.w}, {"samples", a.samples}, {"table_res", a.table_res}, {"table_k", a.table_k},
            {"bilinear", !a.no_bilinear}, {"budget", c.budget}};
}

ExperimentConfig experiment(const FieldCtx& K, const CountArgs& a, i64& M_used) {
    M_used = augment_modulus(K.params, a.M);
    auto u = parse_vec(a.u), v = parse_vec(a.v), w = parse_vec(a.w);
    auto wR = solve_w_center(K, u, v, w);
    return make_experiment(K, a.V, a.H0, a.G, default_mdata(K, M_used), u, v, wR, a.Q, a.k_cut);
}

void add_count_flags(CLI::App* s, CountArgs& a) {
    s->add_option("--V", a.V, "box scale for v");
    s->add_option("--H0", a.H0, "H = H0^2");
    s->add_option("--G", a.G, "box shrink factor");
    s->add_option("--Q", a.Q, "approximation level (0: default)");
    s->add_option("--k-cut", a.k_cut, "gcd cutoff (0: default)");
    s->add_option("--M", a.M, "congruence modulus before augmentation");
    s->add_option("--u", a.u, "unit-scale centre of the u box");
    s->add_option("--v", a.v, "unit-scale centre of the v box");
    s->add_option("--w", a.w, "direction of the w centre");
    s->add_option("--samples", a.samples, "counted triples kept for recovery");
    s->add_option("--table-res", a.table_res, "omega table resolution");
    s->add_option("--table-k", a.table_k, "omega table subsamples per cell");
    s->add_flag("--no-bilinear", a.no_bilinear, "skip the main-term split");
}

void add_common(CLI::App* s, Common& c) {
    s->add_option("--spec", c.spec, "field spec JSON (default: built-in zeta8)");
    s->add_option("--out", c.out, "write the JSON report here");
    s->add_option("--csv", c.csv, "write the CSV table here");
    s->add_option("--threads", c.threads, "worker cap (NORMCOUNT_THREADS otherwise)");
    s->add_option("--budget", c.budget, "pair-operation cap");
    s->add_option("--seed", c.seed, "random seed");
}

int run_field(const Common& c, bool check) {
    Runner r("field", c);
    FieldSpec spec = load_spec(c.spec);
    FieldCtx K = build_field(spec);
    json j;
    j["n"] = K.n;
    j["a"] = K.params.a;
    j["tau"] = K.params.kind == TauKind::SqrtA ? "sqrt(a)" : "(1+sqrt(a))/2";
    j["D_L_squared"] = K.params.dl_sq;
    j["disc_K"] = field_discriminant(K).str();
    j["delta"] = quad_json(K.delta);
    j["norm_delta"] = to_string(norm(K.delta, K.params));
    j["kappa"] = kappa(K.params);
    if (check) {
        std::mt19937_64 rng(c.seed);
        std::uniform_int_distribution<i64> d(-5, 5);
        bool ok = true;
        for (int t = 0; t < 200 && ok; ++t) {
            std::vector<i64> x(static_cast<size_t>(K.n)), y(x.size());
            for (auto& e : x) e = d(rng);
            for (auto& e : y) e = d(rng);
            auto xy = K.multiply(x, y);
            ok = K.dense_NKQ.eval(xy.data()) == K.dense_NKQ.eval(x.data()) * K.dense_NKQ.eval(y.data());
            QuadElem nx = relnorm_KL(K, x);
            ok = ok && norm(nx, K.params) == K.dense_NKQ.eval(x.data());
        }
        j["checks"] = {{"multiplicative_norm", ok}, {"transitivity", ok}};
        std::cerr << "field n=" << K.n << " a=" << K.params.a << " disc=" << j["disc_K"].get<std::string>()
                  << (ok ? " ok" : " FAILED") << "\n";
        if (!ok) fail("BadSpec", "norm identities failed on random samples");
    }
    r.emit(j, spec, {{"check", check}});
    return 0;
}

int run_density(const Common& c, i64 M, i64 Q, i64 P0, int depth, i64 PR, i64 extend) {
    Runner r("density", c);
    FieldSpec spec = load_spec(c.spec);
    FieldCtx K = build_field(spec);
    i64 M_used = augment_modulus(K.params, M);
    LocalDensities D(K, default_mdata(K, M_used));
    auto rep = singular_series(D, Q, P0, depth, PR, extend);
    json j = to_json(rep);
    j["M_requested"] = M;
    j["M_used"] = M_used;
    std::ostringstream csv;
    csv << "p,sigma_p,stabilized\n";
    for (auto& pd : rep.primes) csv << pd.sp.p << "," << to_string(pd.sp.sigma) << "," << pd.sp.stabilized << "\n";
    r.emit_csv(csv.str());
    r.emit(j, spec, {{"M", M}, {"Q", Q}, {"P0", P0}, {"depth", depth}, {"PR", PR}, {"extend", extend}});
    return 0;
}

int run_count_cmd(const Common& c, const CountArgs& a) {
    Runner r("count", c);
    FieldSpec spec = load_spec(c.spec);
    FieldCtx K = build_field(spec);
    i64 M_used = 0;
    auto cfg = experiment(K, a, M_used);
    CountOptions o;
    o.threads = thread_count(c.threads);
    o.budget = c.budget;
    o.samples = a.samples;
    o.table_res = a.table_res;
    o.table_k = a.table_k;
    o.bilinear = !a.no_bilinear;
    auto rep = run_count(cfg, o);
    json j = to_json(rep);
    j["config"]["M_requested"] = a.M;
    // every kept triple must give a rational point on the original equation
    i64 ok = 0;
    std::ostringstream csv;
    csv << "kind,u,v,w,t,check\n";
    for (auto& t : rep.samples) {
        auto rec = recover_solution(K, K.delta, t.w, K.multiply(t.u, t.v));
        bool good = 1 - Rat(K.params.a) * rec.t * rec.t == norm(K.delta, K.params) * norm_rat(K, rec.x);
        ok += good;
        auto join = [](const std::vector<i64>& x) {
            std::string s;
            for (size_t i = 0; i < x.size(); ++i) s += (i ? " " : "") + std::to_string(x[i]);
            return s;
        };
        csv << "sample," << join(t.u) << "," << join(t.v) << "," << join(t.w) << "," << to_string(rec.t) << "," << good << "\n";
    }
    j["recovery"] = {{"samples", rep.samples.size()}, {"verified", ok}};
    for (auto& [k, v] : rep.seconds) csv << "seconds_" << k << ",,,,," << v << "\n";
    r.emit_csv(csv.str());
    r.emit(j, spec, count_params(a, c));
    return 0;
}

int run_approx(const Common& c, const std::string& domain, i64 Q, int instances) {
    Runner r("approx", c);
    if (domain != "Z" && domain != "L") fail("BadFlag", "--domain must be Z or L");
    if (Q < 1 || Q > 12) fail("BadFlag", "--Q must lie in 1..12");
    json reps = json::array();
    std::string csv = "instance,h,class,S,Shat,defect,cap\n";
    bool all_ok = true;
    for (int i = 0; i < instances; ++i) {
        std::uint64_t seed = c.seed + static_cast<std::uint64_t>(i);
        DefectReport d = domain == "Z" ? defect_Z(synthetic_Z(Q, seed)) : defect_L(synthetic_L(Q, seed), thread_count(c.threads));
        all_ok &= d.ok;
        json e = to_json(d);
        e["seed"] = seed;
        reps.push_back(e);
        std::istringstream rows(defect_csv(d));
        std::string line;
        std::getline(rows, line);  // header
        while (std::getline(rows, line)) csv += std::to_string(i) + "," + line + "\n";
    }
    r.emit_csv(csv);
    r.emit({{"domain", domain}, {"Q", Q}, {"all_within_cap", all_ok}, {"instances", reps}}, zeta8_spec(),
           {{"domain", domain}, {"Q", Q}, {"instances", instances}});
    return 0;
}

std::vector<PlaceData> load_places(const std::string& path, int n) {
    std::ifstream in(path);
    if (!in) fail("BadFlag", "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("BadFlag", e.what());
    }
    std::vector<PlaceData> out;
    for (auto& e : j) {
        PlaceData pd;
        pd.p = e.value("p", i64{0});
        pd.k = e.value("k", 8);
        pd.t = parse_rat(e.at("t").get<std::string>());
        for (auto& x : e.at("x")) pd.x.push_back(x.is_string() ? parse_rat(x.get<std::string>()) : Rat(x.get<i64>()));
        if (static_cast<int>(pd.x.size()) != n) fail("BadFlag", "place point has the wrong length");
        out.push_back(pd);
    }
    return out;
}

int run_descent(const Common& c, const std::string& cs, const std::string& places, const std::string& eps, const std::string& S,
                int k, i64 p_max, i64 height) {
    Runner r("descent", c);
    FieldSpec spec = load_spec(c.spec);
    FieldCtx K = build_field(spec);
    Rat cval = parse_rat(cs);
    json params{{"c", cs}, {"places", places}, {"eps", eps}, {"S", S}, {"k", k}, {"p_max", p_max}, {"height", height}};
    json j;
    j["c"] = to_string(cval);
    j["obstructions"] = norm_obstructions(cval, K.params);
    if (places.empty()) {
        auto h = solve_hasse_norm(cval, K.params, height);
        j["delta"] = quad_json(h.delta);
        j["norm_delta"] = to_string(norm(h.delta, K.params));
        j["tried"] = h.tried;
    } else {
        DescentOptions o;
        o.k = k;
        o.p_max = p_max;
        o.height = height;
        auto cert = reduce_to_relative(K, cval, load_places(places, K.n), S.empty() ? std::vector<i64>{} : parse_ints(S), parse_rat(eps), o);
        j["certificate"] = to_json(cert);
        j["verified"] = verify_certificate(K, cert);
    }
    r.emit(j, spec, params);
    return 0;
}

int run_diag(const Common& c, const std::string& what, const CountArgs& a, double Delta, int grid) {
    Runner r("diag", c);
    FieldSpec spec = load_spec(c.spec);
    FieldCtx K = build_field(spec);
    i64 M_used = 0;
    auto cfg = experiment(K, a, M_used);
    json params = count_params(a, c);
    params["what"] = what;
    json j;
    int th = thread_count(c.threads);
    if (what == "omega") {
        j["weight"] = to_json(cfg.wf);
        j["lipschitz"] = lipschitz_constant(cfg.wf, 2000, c.seed);
        j["center_lower"] = center_lower_constant(cfg.wf);
        auto b = image_box(cfg.wf, 200000, c.seed);
        double s = std::pow(cfg.wf.U, cfg.wf.n / 2.0);
        std::ostringstream csv;
        csv << "x1,x2,omega\n";
        double mn = 0;
        for (int i = 0; i < grid; ++i)
            for (int l = 0; l < grid; ++l) {
                double x[2] = {s * (b[0] + (b[1] - b[0]) * (i + 0.5) / grid), s * (b[2] + (b[3] - b[2]) * (l + 0.5) / grid)};
                double v = omega(cfg.wf, x);
                mn = std::min(mn, v);
                csv << x[0] << "," << x[1] << "," << v << "\n";
            }
        j["grid_min"] = mn;
        r.emit_csv(csv.str());
        params["grid"] = grid;
    } else if (what == "sums") {
        LocalDensities D(K, cfg.md);
        auto fam = alpha_family(K, cfg.wf, cfg.md, cfg.Q, D, a.table_res, a.table_k, th);
        Z2Map<i64> alpha;
        for (auto& p : fam.pts) alpha.push_back({{p.x1, p.x2}, p.count});
        auto sq = support_squares(alpha);
        std::ostringstream csv;
        csv << "q,T2\n";
        json t2 = json::array();
        for (i64 q = 1; q <= std::max<i64>(cfg.Q, 4); ++q) {
            double v = T2_sum(alpha, q, sq);
            t2.push_back(v);
            csv << q << "," << v << "\n";
        }
        j["T2"] = t2;
        j["T3"] = T3_sum(alpha, std::max<i64>(cfg.Q, 4), sq);
        j["squares"] = sq.size();
        j["l2"] = to_json(l2_report(fam));
        r.emit_csv(csv.str());
    } else if (what == "lemJ") {
        auto T = build_omega_table(cfg.wf, a.table_res, a.table_k, th);
        j["singular_integral"] = to_json(singular_integral(cfg, T, Delta, th));
        params["Delta"] = Delta;
    } else {
        fail("BadFlag", "--what must be omega, sums or lemJ");
    }
    r.emit(j, spec, params);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Norm-form counting toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Common com;
    CountArgs ca;

    auto* field = app.add_subcommand("field", "load and validate a field spec");
    add_common(field, com);
    bool check = false;
    field->add_flag("--check", check, "run norm identity checks");

    auto* density = app.add_subcommand("density", "local densities and the singular series");
    add_common(density, com);
    i64 dM = 1, dQ = 6, P0 = 13, PR = 47, extend = 81;
    int depth = 2;
    density->add_option("--M", dM, "congruence modulus before augmentation");
    density->add_option("--Q", dQ, "truncation level");
    density->add_option("--P0", P0, "product cutoff");
    density->add_option("--depth", depth, "Hensel depth for sigma_p");
    density->add_option("--PR", PR, "largest prime used to measure tail constants");
    density->add_option("--extend", extend, "extra primes for the R(p) fit");

    auto* count = app.add_subcommand("count", "count solutions in boxes and compare with the prediction");
    add_common(count, com);
    add_count_flags(count, ca);

    auto* approx = app.add_subcommand("approx", "defect tables for synthetic approximation schemes");
    add_common(approx, com);
    std::string domain = "Z";
    i64 aQ = 8;
    int instances = 10;
    approx->add_option("--domain", domain, "Z or L");
    approx->add_option("--Q", aQ, "approximation level");
    approx->add_option("--instances", instances, "number of seeded instances");

    auto* descent = app.add_subcommand("descent", "norm equation in L and the relative reduction");
    add_common(descent, com);
    std::string cs = "1", places, eps = "1/100", S;
    int k = 8;
    i64 p_max = 30, height = 1000000;
    descent->add_option("--c", cs, "the constant c as num/den");
    descent->add_option("--places", places, "JSON list of local solutions {p, t, x}");
    descent->add_option("--eps", eps, "approximation radius as num/den");
    descent->add_option("--S", S, "extra bad primes, comma separated");
    descent->add_option("--k", k, "p-adic precision");
    descent->add_option("--p-max", p_max, "certify places outside S up to this prime");
    descent->add_option("--height", height, "search cap for the norm equation");

    auto* diag = app.add_subcommand("diag", "diagnostics: omega, sums, lemJ");
    add_common(diag, com);
    add_count_flags(diag, ca);
    std::string what = "omega";
    double Delta = 2;
    int grid = 24;
    diag->add_option("what", what, "omega | sums | lemJ")->required();
    diag->add_option("--Delta", Delta, "scaling for the lemJ constant");
    diag->add_option("--grid", grid, "grid size for omega samples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        bool known = argc > 1 && app.get_subcommand_no_throw(argv[1]) != nullptr;
        std::string code = known || (argc > 1 && argv[1][0] == '-') ? "BadFlag" : "UnknownCommand";
        std::cerr << json{{"error", code}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }

    try {
        if (*field) return run_field(com, check);
        if (*density) return run_density(com, dM, dQ, P0, depth, PR, extend);
        if (*count) return run_count_cmd(com, ca);
        if (*approx) return run_approx(com, domain, aQ, instances);
        if (*descent) return run_descent(com, cs, places, eps, S, k, p_max, height);
        if (*diag) return run_diag(com, what, ca, Delta, grid);
    } catch (const Error& e) {
        std::cerr << json{{"error", e.code}, {"message", e.what()}}.dump() << "\n";
        return e.budget ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }
    return 2;
}
