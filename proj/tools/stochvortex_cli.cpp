#include "stochvortex/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace stochvortex;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "RunConfig JSON file (defaults apply when omitted)");
    cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
    cmd->add_option("--workers", c.workers, "Worker threads (overrides the config)");
    cmd->add_option("--out", c.out, "Output directory (overrides the config)");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.workers) cfg.workers = *c.workers;
    if (!c.out.empty()) cfg.output_dir = c.out;
    cfg.validate();
    return cfg;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::string time_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", t);
    return buf;
}

int kernel_check(const RunConfig& cfg) {
    const CutoffProfile profile = cfg.profile.build();
    const double eps = cfg.schedule.epsilon(cfg.n_list.front());
    const MollifiedKernel k(profile, eps);
    json r;
    r["profile"] = profile.name();
    r["epsilon"] = eps;
    const auto order = check_cutoff_order(profile, profile.order() - 1);
    r["cutoff_order"] = {{"declared", profile.order()}, {"satisfied", order.satisfied}, {"mass", order.mass},
                         {"summary", order.summary}};

    CounterStream s(cfg.seed, 0, StreamPurpose::auxiliary);
    double div = 0.0, grad = 0.0, anti = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec3 x = 2.0 * Vec3(2 * s.uniform() - 1, 2 * s.uniform() - 1, 2 * s.uniform() - 1);
        const Vec3 w = s.normal3();
        Mat3 fd;
        const double h = 1e-5;
        for (int j = 0; j < 3; ++j) {
            Vec3 xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            fd.col(j) = (k.eval(xp, w) - k.eval(xm, w)) / (2 * h);
        }
        div = std::max(div, std::abs(fd.trace()));
        grad = std::max(grad, (k.grad(x, w) - fd).cwiseAbs().maxCoeff());
        if (profile.is_radial()) anti = std::max(anti, (k.eval(-x, w) + k.eval(x, w)).norm());
    }
    const auto bounds = kernel_bounds(k);
    r["divergence_max"] = div;
    r["gradient_fd_max"] = grad;
    r["antisymmetry_max"] = anti;
    r["M_eps"] = bounds.M_eps;
    r["L_eps"] = bounds.L_eps;
    const bool ok = order.satisfied && div < 1e-5 && grad < 1e-6 && anti == 0.0;
    r["passed"] = ok;
    r["build_id"] = build_id;
    ensure_dir(cfg.output_dir);
    write_json(r, (fs::path(cfg.output_dir) / "kernel_check.json").string());
    std::cout << r.dump(2) << '\n';
    return ok ? 0 : static_cast<int>(ExitCode::numerical_failure);
}

int simulate_cmd(const RunConfig& cfg) {
    const ForcingData data = cfg.data.build();
    const Population pop = make_population(data);
    const std::uint64_t n = cfg.n_list.front();
    const double eps = cfg.schedule.epsilon(n);
    json manifest;
    manifest["study"] = "simulate";
    manifest["config"] = result_config(cfg);
    manifest["build_id"] = build_id;
    const double R = resolve_R(cfg, pop, eps, manifest);
    const MollifiedKernel kernel(cfg.profile.build(), eps);
    const IntegratorConfig ic = cfg.integrator(n, R);
    const auto snaps = run_system(pop, ic, kernel, cfg.snapshots());
    ensure_dir(cfg.output_dir);
    json files = json::array();
    for (const auto& snap : snaps) {
        const std::string name = "snapshot_t" + time_tag(snap.t);
        const std::string stem = (fs::path(cfg.output_dir) / name).string();
        write_snapshot_binary(snap, ic, stem + ".bin");
        write_snapshot_text(snap, ic, stem + ".txt");
        files.push_back({{"t", snap.t}, {"binary", name + ".bin"}, {"text", name + ".txt"}});
    }
    manifest["snapshots"] = files;
    write_json(manifest, (fs::path(cfg.output_dir) / "manifest.json").string());
    std::cout << "wrote " << snaps.size() << " snapshot(s) to " << cfg.output_dir << '\n';
    return 0;
}

int oracle_cmd(const RunConfig& cfg, std::optional<double> epsilon) {
    const ForcingData data = cfg.data.build();
    const double eps = epsilon.value_or(cfg.schedule.epsilon(cfg.n_list.front()));
    if (eps < 0.0) throw InvalidParameter("--epsilon must be >= 0");
    const OracleSolution sol = solve_oracle(cfg, data, eps);
    FftwTransform tr(sol.config.grid());
    ensure_dir(cfg.output_dir);
    json manifest;
    manifest["study"] = "oracle";
    manifest["epsilon"] = eps;
    manifest["config"] = result_config(cfg);
    manifest["picard_residuals"] = sol.residuals;
    manifest["build_id"] = build_id;
    json files = json::array();
    for (double t : cfg.snapshots()) {
        const FieldGrid g = export_field(sol.trajectory.w[sol.trajectory.node_at(t)], tr);
        const std::string name = "vorticity_t" + time_tag(t);
        const std::string stem = (fs::path(cfg.output_dir) / name).string();
        write_field_grid_binary(g, stem + ".bin");
        write_field_grid_text(g, stem + ".txt");
        files.push_back({{"t", t}, {"binary", name + ".bin"}, {"text", name + ".txt"}});
    }
    manifest["fields"] = files;
    write_json(manifest, (fs::path(cfg.output_dir) / "manifest.json").string());
    std::cout << "oracle at epsilon " << eps << ": " << sol.residuals.size() << " Picard iterations, final residual "
              << (sol.residuals.empty() ? 0.0 : sol.residuals.back()) << '\n';
    return 0;
}

void print_report(const ExperimentReport& rep, const std::string& dir) {
    emit_report(rep, dir);
    std::cout << report_csv(rep.rows);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic vortex particle simulator for forced 3-D Navier-Stokes"};
    app.require_subcommand(1);

    Common kc, sc, oc, cc, vc;
    auto* kernel_cmd = app.add_subcommand("kernel-check", "Cutoff moments, kernel divergence and gradient checks");
    add_common(kernel_cmd, kc);
    auto* sim = app.add_subcommand("simulate", "One particle run; writes binary and text snapshots");
    add_common(sim, sc);
    auto* orc = app.add_subcommand("oracle", "Reference spectral solve; writes FieldGrid files");
    add_common(orc, oc);
    std::optional<double> oracle_eps;
    orc->add_option("--epsilon", oracle_eps, "Mollification scale (0 for the unmollified solve)");
    auto* coup = app.add_subcommand("coupling", "Pathwise chaos-rate study");
    add_common(coup, cc);
    auto* conv = app.add_subcommand("converge", "Field convergence study against the oracle");
    add_common(conv, vc);
    bool eps_sweep = false;
    conv->add_flag("--epsilon-sweep", eps_sweep, "Run the oracle-only epsilon sweep instead");
    auto* rep = app.add_subcommand("report", "Re-emit report.csv and manifest.json from a manifest");
    std::string manifest_path, report_out;
    rep->add_option("manifest", manifest_path, "manifest.json written by a study")->required();
    rep->add_option("--out", report_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::invalid_config);
    }

    try {
        if (*kernel_cmd) return kernel_check(resolve(kc));
        if (*sim) return simulate_cmd(resolve(sc));
        if (*orc) return oracle_cmd(resolve(oc), oracle_eps);
        if (*coup) {
            const RunConfig cfg = resolve(cc);
            print_report(run_chaos_coupling(cfg), cfg.output_dir);
        } else if (*conv) {
            const RunConfig cfg = resolve(vc);
            print_report(eps_sweep ? run_epsilon_sweep(cfg) : run_field_convergence(cfg), cfg.output_dir);
        } else if (*rep) {
            print_report(read_report(manifest_path), report_out);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::invalid_config);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::io);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numerical_failure);
    }
}
