#pragma once

// Experiment orchestration: run configuration, the epsilon_n schedule, the
// chaos-rate coupling study, field convergence against the oracle, the oracle
// epsilon sweep, and report emission (CSV rows plus a JSON manifest).

#include "stochvortex/birth.hpp"
#include "stochvortex/core.hpp"
#include "stochvortex/fields.hpp"
#include "stochvortex/forcing.hpp"
#include "stochvortex/kernels.hpp"
#include "stochvortex/oracle.hpp"
#include "stochvortex/particles.hpp"
#include "stochvortex/spectral.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef STOCHVORTEX_BUILD_ID
#define STOCHVORTEX_BUILD_ID "unknown"
#endif

namespace stochvortex {

using json = nlohmann::json;

inline constexpr const char* build_id = STOCHVORTEX_BUILD_ID;

/// epsilon_n = (c_alpha ln n)^{-1/9}.
inline double epsilon_schedule(std::uint64_t n, double c_alpha) {
    if (n < 2) throw InvalidParameter("epsilon_schedule: n must be >= 2");
    if (!(c_alpha > 0.0)) throw InvalidParameter("epsilon_schedule: c_alpha must be > 0");
    return std::pow(c_alpha * std::log(static_cast<double>(n)), -1.0 / 9.0);
}

/// gamma(t) = t^{3/(2 pt)} + t^{1 - (3/2)(1/pt - 1/p)}.
inline double velocity_weight(double t, double p, double p_tilde) {
    if (t <= 0.0) return 0.0;
    return std::pow(t, 3.0 / (2.0 * p_tilde)) + std::pow(t, 1.0 - 1.5 * (1.0 / p_tilde - 1.0 / p));
}

struct DataConfig {
    std::string preset = "ring"; // ring | unforced | zero
    CurlBump w0{0.5, Vec3::Zero(), 1.0, Vec3::UnitZ()};
    CurlBump g{0.05, Vec3::Zero(), 1.0, Vec3::UnitZ()};
    TimeProfile g_time = TimeProfile::constant();
    double T = 0.2;
    double nu = 0.1;

    ForcingData build() const {
        if (preset == "zero") return zero_data(T, nu);
        ForcingData d = ring_preset(w0, g, g_time, T, nu);
        if (preset == "unforced") d.g_space = SpatialField::zero();
        return d;
    }
};

struct ProfileConfig {
    std::string kind = "gaussian"; // gaussian | shifted_gaussian | multiscale_gaussian
    Vec3 shift = Vec3::Zero();
    int m = 1;

    CutoffProfile build() const {
        if (kind == "gaussian") return CutoffProfile::gaussian();
        if (kind == "shifted_gaussian") return CutoffProfile::shifted_gaussian(shift);
        if (kind == "multiscale_gaussian") return CutoffProfile::multiscale_gaussian(m);
        throw InvalidParameter("unknown profile kind '" + kind + "'");
    }
};

struct ScheduleConfig {
    enum class Kind { fixed_epsilon, log_schedule };
    Kind kind = Kind::fixed_epsilon;
    double value = 0.5; // epsilon or c_alpha

    double epsilon(std::uint64_t n) const {
        return kind == Kind::fixed_epsilon ? value : epsilon_schedule(n, value);
    }
};

struct RunConfig {
    DataConfig data;
    ProfileConfig profile;
    ScheduleConfig schedule;
    std::vector<std::uint64_t> n_list{2500, 10000, 40000};
    std::optional<double> R;     // empty: pilot run
    std::size_t pilot_n = 500;
    double pilot_factor = 4.0;
    double dt = 0.05;
    std::uint64_t seed = 1;
    int workers = 1;
    std::vector<double> snapshot_times; // empty: {T}

    // oracle
    double oracle_L = 8.0;
    std::array<int, 3> oracle_modes{48, 48, 48};
    double oracle_dt = 0.05;
    double picard_tolerance = 1e-10;
    int picard_max_iters = 40;

    // field comparison
    double window = 4.0; // half-width of the comparison window
    std::vector<Vec3> probes{Vec3(0.5, 0, 0), Vec3(0, 0.5, 0), Vec3(0, 0, 0.5), Vec3(1, 1, 0),
                             Vec3(-1, 0, 1),  Vec3(0, -1, -1), Vec3(1.5, 0, 0), Vec3(0, 0, -1.5)};
    double p = 2.0;
    double p_tilde = 4.0;
    std::string dictionary = "gauss20";
    Vec3 dictionary_centre = Vec3::Zero();
    double dictionary_ell = 1.0;

    // coupling
    std::size_t copies = 64;
    std::size_t reference_factor = 8;
    std::uint64_t reference_seed = 7919;
    std::size_t replicates = 8; // independent system seeds seed, seed + 1, ...

    // epsilon sweep
    std::vector<double> epsilon_list{0.4, 0.2, 0.1};

    std::string output_dir = "out";

    std::vector<double> snapshots() const {
        return snapshot_times.empty() ? std::vector<double>{data.T} : snapshot_times;
    }

    OracleConfig oracle(double epsilon) const {
        OracleConfig o;
        o.L = oracle_L;
        o.modes = oracle_modes;
        o.dt = oracle_dt;
        o.nu = data.nu;
        o.T = data.T;
        o.epsilon = epsilon;
        o.profile = profile.build();
        o.picard_tolerance = picard_tolerance;
        o.picard_max_iters = picard_max_iters;
        o.workers = workers;
        return o;
    }

    IntegratorConfig integrator(std::uint64_t n, double R_value) const {
        IntegratorConfig c;
        c.n = n;
        c.epsilon = schedule.epsilon(n);
        c.R = R_value;
        c.dt = dt;
        c.nu = data.nu;
        c.T = data.T;
        c.seed = seed;
        c.workers = workers;
        return c;
    }

    void validate() const {
        static const std::set<std::string> presets{"ring", "unforced", "zero"};
        if (!presets.count(data.preset)) throw InvalidParameter("unknown data preset '" + data.preset + "'");
        (void)data.build();
        (void)profile.build();
        if (!(schedule.value > 0.0))
            throw InvalidParameter(schedule.kind == ScheduleConfig::Kind::fixed_epsilon ? "epsilon must be > 0"
                                                                                         : "c_alpha must be > 0");
        if (n_list.empty()) throw InvalidParameter("n_list must not be empty");
        if (!std::is_sorted(n_list.begin(), n_list.end()) ||
            std::adjacent_find(n_list.begin(), n_list.end()) != n_list.end())
            throw InvalidParameter("n_list must be strictly ascending");
        if (n_list.front() < 2) throw InvalidParameter("n_list entries must be >= 2");
        if (R && !(*R > 0.0)) throw InvalidParameter("R must be > 0");
        if (pilot_n < 2 || !(pilot_factor > 0.0)) throw InvalidParameter("pilot settings must be positive");
        if (workers < 1) throw InvalidParameter("workers must be >= 1");
        integrator(n_list.front(), R.value_or(1.0)).validate();
        for (double s : snapshots()) {
            if (s < 0.0 || s > data.T + 1e-12) throw InvalidParameter("snapshot time outside [0, T]");
            const double m = s / oracle_dt;
            if (std::abs(m - std::round(m)) > 1e-9) throw InvalidParameter("snapshot times must be oracle nodes");
        }
        oracle(0.0).validate();
        if (!(window > 0.0) || window > oracle_L) throw InvalidParameter("window must lie in (0, oracle L]");
        if (!(p >= 1.0) || !(p_tilde >= 1.0)) throw InvalidParameter("p and p_tilde must be >= 1");
        if (dictionary != "gauss20") throw InvalidParameter("unknown dictionary '" + dictionary + "'");
        if (!(dictionary_ell > 0.0)) throw InvalidParameter("dictionary ell must be > 0");
        if (copies < 1 || reference_factor < 1 || replicates < 1) throw InvalidParameter("coupling sizes must be >= 1");
        for (double e : epsilon_list)
            if (!(e > 0.0)) throw InvalidParameter("epsilon_list entries must be > 0");
    }
};

// JSON schema. Unknown keys are rejected so that typos surface as invalid configs.

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidParameter(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw InvalidParameter("unknown key '" + k + "' in " + where);
}

inline Vec3 vec_from(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3) throw InvalidParameter(what + " must be a 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json vec_to(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

inline CurlBump bump_from(const json& j, CurlBump b, const std::string& where) {
    check_keys(j, {"amplitude", "centre", "sigma", "direction"}, where);
    if (j.contains("amplitude")) b.amplitude = j["amplitude"].get<double>();
    if (j.contains("centre")) b.centre = vec_from(j["centre"], where + ".centre");
    if (j.contains("sigma")) b.sigma = j["sigma"].get<double>();
    if (j.contains("direction")) b.direction = vec_from(j["direction"], where + ".direction");
    return b;
}

inline json bump_to(const CurlBump& b) {
    return {{"amplitude", b.amplitude}, {"centre", vec_to(b.centre)}, {"sigma", b.sigma},
            {"direction", vec_to(b.direction)}};
}

} // namespace detail

inline json to_json(const RunConfig& c) {
    json j;
    json data{{"preset", c.data.preset}, {"w0", detail::bump_to(c.data.w0)}, {"g", detail::bump_to(c.data.g)},
              {"T", c.data.T}, {"nu", c.data.nu}};
    if (c.data.g_time.kind == TimeProfile::Kind::constant)
        data["g_time"] = {{"kind", "constant"}};
    else
        data["g_time"] = {{"kind", "cosine"}, {"frequency", c.data.g_time.frequency}, {"phase", c.data.g_time.phase}};
    j["data"] = data;
    j["profile"] = {{"kind", c.profile.kind}, {"shift", detail::vec_to(c.profile.shift)}, {"m", c.profile.m}};
    if (c.schedule.kind == ScheduleConfig::Kind::fixed_epsilon)
        j["schedule"] = {{"fixed_epsilon", c.schedule.value}};
    else
        j["schedule"] = {{"log_schedule", {{"c_alpha", c.schedule.value}}}};
    j["n_list"] = c.n_list;
    j["integrator"] = {{"dt", c.dt}, {"seed", c.seed}, {"workers", c.workers}};
    if (c.R)
        j["integrator"]["R"] = *c.R;
    else
        j["integrator"]["R"] = "pilot";
    j["pilot"] = {{"n", c.pilot_n}, {"factor", c.pilot_factor}};
    j["snapshot_times"] = c.snapshot_times;
    j["oracle"] = {{"L", c.oracle_L},
                   {"modes", c.oracle_modes},
                   {"dt", c.oracle_dt},
                   {"picard_tolerance", c.picard_tolerance},
                   {"picard_max_iters", c.picard_max_iters}};
    json probes = json::array();
    for (const auto& p : c.probes) probes.push_back(detail::vec_to(p));
    j["fields"] = {{"window", c.window}, {"probes", probes}, {"p", c.p}, {"p_tilde", c.p_tilde}};
    j["dictionary"] = {{"id", c.dictionary}, {"centre", detail::vec_to(c.dictionary_centre)}, {"ell", c.dictionary_ell}};
    j["coupling"] = {{"copies", c.copies}, {"reference_factor", c.reference_factor}, {"reference_seed", c.reference_seed}, {"replicates", c.replicates}};
    j["epsilon_list"] = c.epsilon_list;
    j["output_dir"] = c.output_dir;
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        detail::check_keys(j,
                           {"data", "profile", "schedule", "n_list", "integrator", "pilot", "snapshot_times", "oracle",
                            "fields", "dictionary", "coupling", "epsilon_list", "output_dir"},
                           "config");
        if (j.contains("data")) {
            const json& d = j["data"];
            detail::check_keys(d, {"preset", "w0", "g", "g_time", "T", "nu"}, "data");
            if (d.contains("preset")) c.data.preset = d["preset"].get<std::string>();
            if (d.contains("w0")) c.data.w0 = detail::bump_from(d["w0"], c.data.w0, "data.w0");
            if (d.contains("g")) c.data.g = detail::bump_from(d["g"], c.data.g, "data.g");
            if (d.contains("T")) c.data.T = d["T"].get<double>();
            if (d.contains("nu")) c.data.nu = d["nu"].get<double>();
            if (d.contains("g_time")) {
                const json& t = d["g_time"];
                detail::check_keys(t, {"kind", "frequency", "phase"}, "data.g_time");
                const std::string kind = t.value("kind", std::string("constant"));
                if (kind == "constant")
                    c.data.g_time = TimeProfile::constant();
                else if (kind == "cosine")
                    c.data.g_time = TimeProfile::cosine(t.value("frequency", 1.0), t.value("phase", 0.0));
                else
                    throw InvalidParameter("unknown g_time kind '" + kind + "'");
            }
        }
        if (j.contains("profile")) {
            const json& p = j["profile"];
            detail::check_keys(p, {"kind", "shift", "m"}, "profile");
            if (p.contains("kind")) c.profile.kind = p["kind"].get<std::string>();
            if (p.contains("shift")) c.profile.shift = detail::vec_from(p["shift"], "profile.shift");
            if (p.contains("m")) c.profile.m = p["m"].get<int>();
        }
        if (j.contains("schedule")) {
            const json& s = j["schedule"];
            detail::check_keys(s, {"fixed_epsilon", "log_schedule"}, "schedule");
            if (s.contains("fixed_epsilon") == s.contains("log_schedule"))
                throw InvalidParameter("schedule needs exactly one of fixed_epsilon, log_schedule");
            if (s.contains("fixed_epsilon")) {
                c.schedule = {ScheduleConfig::Kind::fixed_epsilon, s["fixed_epsilon"].get<double>()};
            } else {
                detail::check_keys(s["log_schedule"], {"c_alpha"}, "schedule.log_schedule");
                c.schedule = {ScheduleConfig::Kind::log_schedule, s["log_schedule"].at("c_alpha").get<double>()};
            }
        }
        if (j.contains("n_list")) c.n_list = j["n_list"].get<std::vector<std::uint64_t>>();
        if (j.contains("integrator")) {
            const json& g = j["integrator"];
            detail::check_keys(g, {"R", "dt", "seed", "workers"}, "integrator");
            if (g.contains("R")) {
                if (g["R"].is_string()) {
                    if (g["R"].get<std::string>() != "pilot") throw InvalidParameter("integrator.R must be a number or \"pilot\"");
                    c.R.reset();
                } else {
                    c.R = g["R"].get<double>();
                }
            }
            if (g.contains("dt")) c.dt = g["dt"].get<double>();
            if (g.contains("seed")) c.seed = g["seed"].get<std::uint64_t>();
            if (g.contains("workers")) c.workers = g["workers"].get<int>();
        }
        if (j.contains("pilot")) {
            detail::check_keys(j["pilot"], {"n", "factor"}, "pilot");
            c.pilot_n = j["pilot"].value("n", c.pilot_n);
            c.pilot_factor = j["pilot"].value("factor", c.pilot_factor);
        }
        if (j.contains("snapshot_times")) c.snapshot_times = j["snapshot_times"].get<std::vector<double>>();
        if (j.contains("oracle")) {
            const json& o = j["oracle"];
            detail::check_keys(o, {"L", "modes", "dt", "picard_tolerance", "picard_max_iters"}, "oracle");
            c.oracle_L = o.value("L", c.oracle_L);
            if (o.contains("modes")) {
                if (o["modes"].is_number())
                    c.oracle_modes.fill(o["modes"].get<int>());
                else
                    c.oracle_modes = o["modes"].get<std::array<int, 3>>();
            }
            c.oracle_dt = o.value("dt", c.oracle_dt);
            c.picard_tolerance = o.value("picard_tolerance", c.picard_tolerance);
            c.picard_max_iters = o.value("picard_max_iters", c.picard_max_iters);
        }
        if (j.contains("fields")) {
            const json& f = j["fields"];
            detail::check_keys(f, {"window", "probes", "p", "p_tilde"}, "fields");
            c.window = f.value("window", c.window);
            if (f.contains("probes")) {
                c.probes.clear();
                for (const auto& p : f["probes"]) c.probes.push_back(detail::vec_from(p, "fields.probes"));
            }
            c.p = f.value("p", c.p);
            c.p_tilde = f.value("p_tilde", c.p_tilde);
        }
        if (j.contains("dictionary")) {
            const json& d = j["dictionary"];
            detail::check_keys(d, {"id", "centre", "ell"}, "dictionary");
            c.dictionary = d.value("id", c.dictionary);
            if (d.contains("centre")) c.dictionary_centre = detail::vec_from(d["centre"], "dictionary.centre");
            c.dictionary_ell = d.value("ell", c.dictionary_ell);
        }
        if (j.contains("coupling")) {
            const json& k = j["coupling"];
            detail::check_keys(k, {"copies", "reference_factor", "reference_seed", "replicates"}, "coupling");
            c.copies = k.value("copies", c.copies);
            c.reference_factor = k.value("reference_factor", c.reference_factor);
            c.reference_seed = k.value("reference_seed", c.reference_seed);
            c.replicates = k.value("replicates", c.replicates);
        }
        if (j.contains("epsilon_list")) c.epsilon_list = j["epsilon_list"].get<std::vector<double>>();
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    } catch (const json::exception& e) {
        throw InvalidParameter(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidParameter("config '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

// Reports.

/// One CSV row. Empty optionals print as empty cells.
struct ReportRow {
    std::string study;
    std::uint64_t n = 0;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    double R = 0.0;
    double t = 0.0;
    std::optional<double> dictionary_error;
    std::optional<double> grid_l2_error;     // ||phi_eps * mu - w^eps||_2 on the window
    std::optional<double> grid_l2_bias;      // ||phi_eps * w^eps - w^eps||_2, oracle only
    std::optional<double> grid_l2_mc_error;  // ||phi_eps * mu - phi_eps * w^eps||_2
    std::optional<double> velocity_error;    // gamma(t) max_probe |u_n - u^eps|
    std::optional<double> coupling_error;
    std::optional<double> weighted_eps_error; // sup_t t^{3/(2p) - 1/2} ||w^eps - w||_p
    std::string config_echo;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    json manifest = json::object(); // wall-clock, R choice, warnings, diagnostics
};

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{
        "study",         "n",           "epsilon",          "seed",           "R",
        "t",             "dictionary_error", "grid_l2_error", "grid_l2_bias", "grid_l2_mc_error",
        "velocity_error", "coupling_error",  "weighted_eps_error", "build_id", "config_echo"};
    return cols;
}

namespace detail {
inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }
inline std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}
inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline std::optional<double> opt_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}
} // namespace detail

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : rows) {
        os << r.study << ',' << r.n << ',' << detail::num(r.epsilon) << ',' << r.seed << ',' << detail::num(r.R) << ','
           << detail::num(r.t) << ',' << detail::opt(r.dictionary_error) << ',' << detail::opt(r.grid_l2_error) << ','
           << detail::opt(r.grid_l2_bias) << ',' << detail::opt(r.grid_l2_mc_error) << ','
           << detail::opt(r.velocity_error) << ',' << detail::opt(r.coupling_error) << ','
           << detail::opt(r.weighted_eps_error) << ',' << build_id << ',' << detail::csv_quote(r.config_echo) << '\n';
    }
    return os.str();
}

inline json row_to_json(const ReportRow& r) {
    return {{"study", r.study},
            {"n", r.n},
            {"epsilon", r.epsilon},
            {"seed", r.seed},
            {"R", r.R},
            {"t", r.t},
            {"dictionary_error", detail::opt_json(r.dictionary_error)},
            {"grid_l2_error", detail::opt_json(r.grid_l2_error)},
            {"grid_l2_bias", detail::opt_json(r.grid_l2_bias)},
            {"grid_l2_mc_error", detail::opt_json(r.grid_l2_mc_error)},
            {"velocity_error", detail::opt_json(r.velocity_error)},
            {"coupling_error", detail::opt_json(r.coupling_error)},
            {"weighted_eps_error", detail::opt_json(r.weighted_eps_error)},
            {"config_echo", r.config_echo}};
}

inline ReportRow row_from_json(const json& j) {
    ReportRow r;
    r.study = j.at("study").get<std::string>();
    r.n = j.at("n").get<std::uint64_t>();
    r.epsilon = j.at("epsilon").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.R = j.at("R").get<double>();
    r.t = j.at("t").get<double>();
    r.dictionary_error = detail::opt_from(j.at("dictionary_error"));
    r.grid_l2_error = detail::opt_from(j.at("grid_l2_error"));
    r.grid_l2_bias = detail::opt_from(j.at("grid_l2_bias"));
    r.grid_l2_mc_error = detail::opt_from(j.at("grid_l2_mc_error"));
    r.velocity_error = detail::opt_from(j.at("velocity_error"));
    r.coupling_error = detail::opt_from(j.at("coupling_error"));
    r.weighted_eps_error = detail::opt_from(j.at("weighted_eps_error"));
    r.config_echo = j.at("config_echo").get<std::string>();
    return r;
}

namespace detail {

/// Moves every "wall_seconds" entry out of `j` into `timing`, keyed by JSON pointer.
inline void split_timing(json& j, json& timing, const std::string& path = "") {
    if (j.is_object()) {
        if (auto it = j.find("wall_seconds"); it != j.end()) {
            timing[path.empty() ? "/" : path] = *it;
            j.erase(it);
        }
        for (auto& [k, v] : j.items()) split_timing(v, timing, path + "/" + k);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) split_timing(j[i], timing, path + "/" + std::to_string(i));
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

} // namespace detail

/// Writes <dir>/report.csv, <dir>/manifest.json and <dir>/timing.json. Wall-clock
/// readings go to timing.json only, so the first two are byte-reproducible.
inline void emit_report(const ExperimentReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    detail::write_text_file((fs::path(dir) / "report.csv").string(), report_csv(report.rows));
    json m = report.manifest;
    json timing = json::object();
    detail::split_timing(m, timing);
    m["build_id"] = build_id;
    m["columns"] = report_columns();
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back(row_to_json(r));
    m["rows"] = rows;
    detail::write_text_file((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
    detail::write_text_file((fs::path(dir) / "timing.json").string(), timing.dump(2) + "\n");
}

/// Reads a manifest written by emit_report.
inline ExperimentReport read_report(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest '" + manifest_path + "'");
    ExperimentReport rep;
    try {
        in >> rep.manifest;
        for (const auto& r : rep.manifest.at("rows")) rep.rows.push_back(row_from_json(r));
    } catch (const json::exception& e) {
        throw InvalidParameter("manifest '" + manifest_path + "' is malformed: " + e.what());
    }
    rep.manifest.erase("rows");
    return rep;
}

// Experiments.

/// Config without the worker count and output directory, neither of which changes results.
inline json result_config(const RunConfig& cfg) {
    json j = to_json(cfg);
    j["integrator"].erase("workers");
    j.erase("output_dir");
    return j;
}

inline std::string config_echo(const RunConfig& cfg) { return result_config(cfg).dump(); }

/// Echo of `cfg` narrowed to one run, so the row can be re-run on its own.
inline std::string row_echo(RunConfig cfg, std::uint64_t n, std::optional<double> R) {
    cfg.n_list = {n};
    if (R) cfg.R = R;
    return config_echo(cfg);
}

inline bool data_is_zero(const ForcingData& d) {
    return d.w0.trivially_zero() && (d.g_space.trivially_zero() || d.T == 0.0);
}

/// Particles for data that vanish identically: no births to sample, all weights zero.
inline SystemState zero_state(std::size_t n) {
    SystemState sys;
    sys.particles.resize(n);
    for (std::size_t i = 0; i < n; ++i) sys.particles[i].stream = i;
    return sys;
}

/// Initial state and birth law for `data`; the law is empty for zero data.
struct Population {
    std::optional<BirthLaw> law;
    double hbar = 0.0;

    SystemState initial(std::size_t n, std::uint64_t seed, int workers) const {
        return law ? initial_state(*law, n, seed, workers) : zero_state(n);
    }
};

inline Population make_population(const ForcingData& data) {
    Population p;
    if (data_is_zero(data)) return p;
    p.law = build_birth_law(data);
    p.hbar = p.law->hbar;
    return p;
}

/// The interacting system from fresh births with optional per-step callback.
inline std::vector<SystemState> run_system(const Population& pop, const IntegratorConfig& cfg,
                                           const MollifiedKernel& kernel, const std::vector<double>& times,
                                           const SimulationHooks& hooks = {}) {
    cfg.validate();
    InteractingDrift drift(kernel, cfg.R);
    return simulate_from(pop.initial(cfg.n, cfg.seed, cfg.workers), cfg, drift, times, hooks);
}

/// R = factor * max ||Phi||_F observed in an untruncated pilot run.
inline double pilot_R(const RunConfig& cfg, const Population& pop, double epsilon) {
    IntegratorConfig ic = cfg.integrator(cfg.pilot_n, 1e300);
    ic.epsilon = epsilon;
    ic.seed = cfg.seed + 0x9E3779B97F4A7C15ull;
    const MollifiedKernel kernel(cfg.profile.build(), epsilon);
    double peak = std::sqrt(3.0);
    SimulationHooks hooks;
    auto track = [&](const SystemState& s) {
        for (const auto& p : s.particles)
            if (p.born(s.t)) peak = std::max(peak, p.phi.norm());
    };
    hooks.on_step = track;
    const auto snaps = run_system(pop, ic, kernel, {cfg.data.T}, hooks);
    if (!snaps.empty()) track(snaps.back());
    return cfg.pilot_factor * peak;
}

inline double resolve_R(const RunConfig& cfg, const Population& pop, double epsilon, json& manifest) {
    if (cfg.R) {
        manifest["R"] = {{"source", "config"}, {"value", *cfg.R}};
        return *cfg.R;
    }
    const double R = pilot_R(cfg, pop, epsilon);
    manifest["R"] = {{"source", "pilot"}, {"value", R}, {"pilot_n", cfg.pilot_n}, {"factor", cfg.pilot_factor}};
    return R;
}

/// Mean over the first min(n, copies) particles of sup_t (|X - Y| + ||Phi - Psi||_F).
inline double coupling_distance(const std::vector<std::vector<ParticleState>>& system,
                                const std::vector<std::vector<ParticleState>>& copies) {
    if (system.size() != copies.size() || system.empty()) throw ShapeError("coupling paths have different lengths");
    const std::size_t m = copies.front().size();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double sup = 0.0;
        for (std::size_t s = 0; s < system.size(); ++s) {
            const auto& a = system[s][i];
            const auto& b = copies[s][i];
            sup = std::max(sup, (a.x - b.x).norm() + (a.phi - b.phi).norm());
        }
        total += sup;
    }
    return m ? total / static_cast<double>(m) : 0.0;
}

/// Pathwise coupling between the interacting system and mean-field copies that share
/// births and Brownian streams; the copies feel the drift of a fixed reference
/// ensemble of size reference_factor * max(n_list). The row value is the mean over
/// `replicates` independent system seeds against the same reference ensemble.
inline ExperimentReport run_chaos_coupling(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.schedule.kind != ScheduleConfig::Kind::fixed_epsilon)
        throw InvalidParameter("coupling study needs a fixed epsilon schedule");
    if (cfg.n_list.size() < 2) throw InvalidParameter("coupling study needs at least two n values");
    using clock = std::chrono::steady_clock;
    ExperimentReport rep;
    rep.manifest["study"] = "coupling";
    rep.manifest["config"] = result_config(cfg);
    const ForcingData data = cfg.data.build();
    const Population pop = make_population(data);
    const double eps = cfg.schedule.value;
    const double R = resolve_R(cfg, pop, eps, rep.manifest);
    const MollifiedKernel kernel(cfg.profile.build(), eps);
    const std::vector<double> times = cfg.snapshots();

    const auto t0 = clock::now();
    IntegratorConfig ref_cfg = cfg.integrator(cfg.reference_factor * cfg.n_list.back(), R);
    ref_cfg.seed = cfg.reference_seed;
    std::vector<SourceSet> reference;
    SimulationHooks ref_hooks;
    ref_hooks.on_step = [&](const SystemState& s) { reference.push_back(SourceSet::from(s, R)); };
    (void)run_system(pop, ref_cfg, kernel, times, ref_hooks);
    rep.manifest["reference"] = {{"n", ref_cfg.n},
                                 {"seed", ref_cfg.seed},
                                 {"wall_seconds", std::chrono::duration<double>(clock::now() - t0).count()}};

    json timings = json::array();
    for (std::uint64_t n : cfg.n_list) {
        const auto start = clock::now();
        const std::size_t m = std::min<std::size_t>(n, cfg.copies);
        auto prefix = [m](const SystemState& s) {
            return std::vector<ParticleState>(s.particles.begin(), s.particles.begin() + m);
        };
        std::vector<double> per_replicate;
        for (std::size_t r = 0; r < cfg.replicates; ++r) {
            IntegratorConfig ic = cfg.integrator(n, R);
            ic.seed = cfg.seed + r;
            std::vector<std::vector<ParticleState>> sys_path, copy_path;
            SimulationHooks hooks;
            hooks.on_step = [&](const SystemState& s) { sys_path.push_back(prefix(s)); };
            const SystemState start_state = pop.initial(n, ic.seed, ic.workers);
            InteractingDrift drift(kernel, R);
            const auto end_sys = simulate_from(start_state, ic, drift, times, hooks);
            sys_path.push_back(prefix(end_sys.back()));

            SystemState copies;
            copies.particles = prefix(start_state);
            IntegratorConfig cc = ic;
            cc.n = m;
            ExternalEnsembleDrift field(kernel, reference, false);
            SimulationHooks copy_hooks;
            copy_hooks.on_step = [&](const SystemState& s) { copy_path.push_back(s.particles); };
            const auto end_copy = simulate_from(copies, cc, field, times, copy_hooks);
            copy_path.push_back(end_copy.back().particles);
            per_replicate.push_back(coupling_distance(sys_path, copy_path));
        }

        ReportRow row;
        row.study = "coupling";
        row.n = n;
        row.epsilon = eps;
        row.seed = cfg.seed;
        row.R = R;
        row.t = data.T;
        row.coupling_error = std::accumulate(per_replicate.begin(), per_replicate.end(), 0.0) /
                             static_cast<double>(per_replicate.size());
        row.config_echo = row_echo(cfg, n, R);
        rep.rows.push_back(row);
        timings.push_back({{"n", n},
                           {"replicate_errors", per_replicate},
                           {"wall_seconds", std::chrono::duration<double>(clock::now() - start).count()}});
    }
    rep.manifest["runs"] = timings;
    return rep;
}

/// Oracle trajectory of the mollified problem with its solver diagnostics.
struct OracleSolution {
    OracleConfig config;
    Trajectory trajectory;
    std::vector<double> residuals;
};

inline OracleSolution solve_oracle(const RunConfig& cfg, const ForcingData& data, double epsilon) {
    OracleSolution s;
    s.config = cfg.oracle(epsilon);
    FftwTransform tr(s.config.grid());
    const SpectralProblem prob = discretize(data, s.config, tr);
    try {
        PicardResult r = solve_mild_picard(s.config, prob, tr);
        s.trajectory = std::move(r.trajectory);
        s.residuals = std::move(r.residuals);
    } catch (const NumericalFailure& e) {
        throw NumericalFailure(std::string("oracle at epsilon ") + std::to_string(epsilon) + ": " + e.what());
    }
    return s;
}

/// Oracle nodes inside the centred cube of half-width `window`.
inline GridSpec window_spec(const SpectralGrid& g, double window) {
    std::array<int, 3> lo{}, count{};
    Vec3 box_min, box_max;
    for (int a = 0; a < 3; ++a) {
        const double h = g.spacing(a);
        lo[a] = static_cast<int>(std::ceil((g.L - window) / h - 1e-9));
        const int hi = static_cast<int>(std::floor((g.L + window) / h + 1e-9));
        count[a] = std::min(hi, g.N[a] - 1) - lo[a] + 1;
        box_min(a) = -g.L + lo[a] * h;
        box_max(a) = -g.L + (lo[a] + count[a] - 1) * h;
    }
    return GridSpec{box_min, box_max, count};
}

/// Restriction of a node-lattice FieldGrid to `spec` (nodes must coincide).
inline FieldGrid restrict_to(const FieldGrid& full, const GridSpec& spec) {
    FieldGrid out(spec, full.components());
    const GridSpec& f = full.spec();
    const Vec3 h = f.spacing();
    for (std::size_t n = 0; n < out.nodes(); ++n) {
        const Vec3 x = spec.node(n);
        const int i = static_cast<int>(std::lround((x(0) - f.box_min(0)) / h(0)));
        const int j = static_cast<int>(std::lround((x(1) - f.box_min(1)) / h(1)));
        const int k = static_cast<int>(std::lround((x(2) - f.box_min(2)) / h(2)));
        const std::size_t src = f.index(i, j, k);
        for (int c = 0; c < full.components(); ++c) out.at(n, c) = full.at(src, c);
    }
    return out;
}

/// Particle fields at fixed (n, epsilon) against the oracle: dictionary sup error,
/// window L^2 errors with and without the mollification bias, and gamma(t)-weighted
/// velocity probe errors.
inline ExperimentReport run_field_convergence(const RunConfig& cfg) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    ExperimentReport rep;
    rep.manifest["study"] = "converge";
    rep.manifest["config"] = result_config(cfg);
    const ForcingData data = cfg.data.build();
    const Population pop = make_population(data);
    const auto dictionary = test_dictionary(cfg.dictionary_centre, cfg.dictionary_ell);
    const std::vector<double> times = cfg.snapshots();
    std::map<double, OracleSolution> oracles;
    std::map<double, double> R_by_eps;
    json runs = json::array();
    json oracle_info = json::array();
    for (std::uint64_t n : cfg.n_list) {
        const auto start = clock::now();
        const double eps = cfg.schedule.epsilon(n);
        if (!oracles.count(eps)) {
            const auto o0 = clock::now();
            oracles.emplace(eps, solve_oracle(cfg, data, eps));
            oracle_info.push_back({{"epsilon", eps},
                                   {"picard_residuals", oracles.at(eps).residuals},
                                   {"wall_seconds", std::chrono::duration<double>(clock::now() - o0).count()}});
        }
        const OracleSolution& orc = oracles.at(eps);
        if (!R_by_eps.count(eps)) R_by_eps.emplace(eps, resolve_R(cfg, pop, eps, rep.manifest));
        const double R = R_by_eps.at(eps);
        const CutoffProfile profile = cfg.profile.build();
        const MollifiedKernel kernel(profile, eps);
        const IntegratorConfig ic = cfg.integrator(n, R);
        const auto snaps = run_system(pop, ic, kernel, times);
        const SpectralGrid sg = orc.config.grid();
        FftwTransform tr(sg);
        const GridSpec win = window_spec(sg, cfg.window);
        const auto symbol = mollifier_symbol(sg, profile, eps);
        for (const auto& snap : snaps) {
            const SpectralField& w = orc.trajectory.w[orc.trajectory.node_at(snap.t)];
            const FieldGrid w_nodes = restrict_to(export_field(w, tr), win);
            const FieldGrid w_smooth = restrict_to(export_field(apply_symbol(w, symbol), tr), win);
            const FieldGrid w_emp = empirical_vorticity(snap, kernel, R, win, cfg.workers);

            ReportRow row;
            row.study = "converge";
            row.n = n;
            row.epsilon = eps;
            row.seed = cfg.seed;
            row.R = R;
            row.t = snap.t;
            row.grid_l2_error = field_error(w_emp, w_nodes, 2.0);
            row.grid_l2_bias = field_error(w_smooth, w_nodes, 2.0);
            row.grid_l2_mc_error = field_error(w_emp, w_smooth, 2.0);

            double dict = 0.0;
            const FieldGrid w_full = export_field(w, tr);
            for (const auto& f : dictionary) {
                const double a = pair_with_test(snap, R, f);
                const double b = grid_pairing(w_full, f);
                dict = std::max(dict, std::abs(a - b));
            }
            row.dictionary_error = dict;

            const SpectralField u = biot_savart_spectral(w, symbol);
            const auto u_emp = empirical_velocity(snap, kernel, R, cfg.probes, cfg.workers);
            double vmax = 0.0;
            for (std::size_t k = 0; k < cfg.probes.size(); ++k)
                vmax = std::max(vmax, (u_emp[k] - u.evaluate(cfg.probes[k])).norm());
            row.velocity_error = velocity_weight(snap.t, cfg.p, cfg.p_tilde) * vmax;
            row.config_echo = row_echo(cfg, n, R);
            rep.rows.push_back(row);
        }
        runs.push_back({{"n", n},
                        {"epsilon", eps},
                        {"wall_seconds", std::chrono::duration<double>(clock::now() - start).count()}});
    }
    rep.manifest["runs"] = runs;
    rep.manifest["oracles"] = oracle_info;
    return rep;
}

/// Oracle-only epsilon sweep: sup over nodes t > 0 of t^{3/(2p) - 1/2} ||w^eps - w||_p
/// (p = 2 via Parseval) against the unmollified solve on the same grid.
inline ExperimentReport run_epsilon_sweep(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.p != 2.0) throw InvalidParameter("epsilon sweep uses p = 2");
    using clock = std::chrono::steady_clock;
    ExperimentReport rep;
    rep.manifest["study"] = "epsilon";
    rep.manifest["config"] = result_config(cfg);
    const ForcingData data = cfg.data.build();
    const auto t0 = clock::now();
    const OracleSolution ref = solve_oracle(cfg, data, 0.0);
    json runs = json::array();
    runs.push_back({{"epsilon", 0.0}, {"wall_seconds", std::chrono::duration<double>(clock::now() - t0).count()}});
    const double power = 3.0 / (2.0 * cfg.p) - 0.5;
    for (double eps : cfg.epsilon_list) {
        const auto start = clock::now();
        const OracleSolution s = solve_oracle(cfg, data, eps);
        double sup = 0.0;
        for (std::size_t j = 1; j < s.trajectory.t.size(); ++j) {
            const double t = s.trajectory.t[j];
            sup = std::max(sup, std::pow(t, power) * (s.trajectory.w[j] - ref.trajectory.w[j]).l2_norm());
        }
        ReportRow row;
        row.study = "epsilon";
        row.epsilon = eps;
        row.seed = cfg.seed;
        row.t = data.T;
        row.weighted_eps_error = sup;
        row.config_echo = config_echo(cfg);
        rep.rows.push_back(row);
        runs.push_back({{"epsilon", eps}, {"wall_seconds", std::chrono::duration<double>(clock::now() - start).count()}});
    }
    rep.manifest["runs"] = runs;
    return rep;
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidParameter("loglog_slope needs >= 2 matching points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidParameter("loglog_slope needs positive values");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

} // namespace stochvortex
