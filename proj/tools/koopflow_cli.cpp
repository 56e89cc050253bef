#include "koopflow/experiment.hpp"
#include "koopflow/oracle.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

using namespace koopflow;

namespace {

struct Options {
    std::string config = "ex1";
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> methods;
    double scale = 1.0;
    bool identity = false;
};

void add_common(CLI::App* cmd, Options& o)
{
    cmd->add_option("--config", o.config, "Config file (JSON) or preset name: ex1, ex3")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Override the config seed");
    cmd->add_option("--out", o.out, "Output directory (default: config output_dir)");
    cmd->add_option("--method", o.methods, "Methods: kefmd, edmd_monomial, edmd_rbf (repeatable)");
    cmd->add_option("--scale", o.scale, "Scale trajectory and epoch counts")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Options& o, const CLI::App* cmd)
{
    ExperimentConfig cfg = fs::exists(o.config) ? load_config(o.config) : preset(o.config);
    if (o.seed)
        cfg.seed = *o.seed;
    if (!o.out.empty())
        cfg.output_dir = o.out;
    if (cmd->count("--method"))
        cfg.methods = o.methods;
    if (o.scale != 1.0)
        apply_scale(cfg, o.scale);
    validate(cfg);
    return cfg;
}

void log_line(const std::string& s)
{
    std::cerr << s << std::endl;
}

fs::path out_dir(const ExperimentConfig& cfg)
{
    return cfg.output_dir;
}

TrajectoryDataset load_or_fail(const fs::path& dir)
{
    const auto csv = dir / "dataset.csv";
    const auto meta = dir / "dataset.meta.json";
    if (!fs::exists(csv) || !fs::exists(meta))
        throw IoError("dataset not found in " + dir.string() + " (run 'generate' first)");
    return load_dataset(csv, meta);
}

int cmd_generate(const ExperimentConfig& cfg)
{
    const auto ds = make_dataset(cfg);
    const auto dir = out_dir(cfg);
    save_dataset(dir / "dataset.csv", dir / "dataset.meta.json", ds);
    write_json(dir / "config.json", to_json(cfg));
    std::cout << "wrote " << ds.pair_count() << " pairs to " << (dir / "dataset.csv").string() << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg)
{
    const auto dir = out_dir(cfg);
    const auto ds = load_or_fail(dir);
    TrainResult tr;
    try {
        tr = train_flow(cfg, ds, dir / "checkpoints", [](const EpochLoss& e, const FlowModel&) {
            if (e.epoch % 10 == 0)
                log_line("epoch " + std::to_string(e.epoch) + " conjugacy " + format_double(e.mean.conjugacy) +
                         " total " + format_double(e.mean.total));
        });
    } catch (const NumericalError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 1;
    }
    save_flow(dir / "flow.json", tr.flow);
    save_training_log(dir / "train_log.csv", tr.history);
    const double final_conj = tr.history.empty() ? 0.0 : tr.history.back().mean.conjugacy;
    std::cout << "trained " << tr.history.size() << " epochs" << (tr.stopped_early ? " (plateau stop)" : "")
              << ", final conjugacy loss " << format_double(final_conj) << "\n";
    return 0;
}

int cmd_build(const ExperimentConfig& cfg, bool identity)
{
    const auto dir = out_dir(cfg);
    const auto ds = load_or_fail(dir);
    const Mat A = jacobian_linearization(cfg.system);
    int status = 0;
    for (const auto& method : cfg.methods) {
        try {
            if (method == "kefmd") {
                Json ref;
                DiffeoMap diffeo;
                if (identity) {
                    ref = Json{{"kind", "identity"}};
                    diffeo = identity_map();
                } else {
                    if (!fs::exists(dir / "flow.json"))
                        throw IoError("flow not found in " + dir.string() + " (run 'train' first or pass --identity)");
                    ref = flow_reference("flow.json");
                    diffeo = resolve_diffeo(ref, dir);
                }
                const auto model = build_kefmd_model(cfg, diffeo, ds);
                save_library(dir / "library.json", *model.lift, A, ref);
                save_model(dir / "model.json", model, "library.json");
                if (model.fit.rank_deficient)
                    std::cerr << "warning: reconstruction is rank deficient (rank " << model.fit.rank << ")\n";
                std::cout << "kefmd: D=" << model.lifted_dim() << " reconstruction RMSE "
                          << format_double(model.fit.residual_rms) << "\n";
            } else {
                const auto model = build_edmd_model(cfg, method, ds);
                save_edmd_model(dir / (method + ".json"), model);
                std::cout << method << ": D=" << model.dict.size() << " reconstruction RMSE "
                          << format_double(model.fit_reconstruction.residual_rms) << " generator spectral abscissa "
                          << format_double(spectral_abscissa(model.L)) << "\n";
            }
        } catch (const Error& e) {
            std::cerr << method << ": " << e.what() << "\n";
            status = 1;
        }
    }
    return status;
}

void write_rmse_table(const fs::path& path, const MethodReport& r)
{
    std::string csv = "traj_id,rmse\n";
    for (std::size_t i = 0; i < r.rmse_per_trajectory.size(); ++i)
        csv += std::to_string(i) + ',' + format_double(r.rmse_per_trajectory[i]) + '\n';
    atomic_write(path, csv);
}

int cmd_evaluate(const ExperimentConfig& cfg)
{
    const auto dir = out_dir(cfg);
    const EvalSet eval = make_eval_set(cfg);
    EvalReport report;
    report.experiment = cfg.name;
    int status = 0;
    for (const auto& method : cfg.methods) {
        const auto t0 = std::chrono::steady_clock::now();
        MethodReport r;
        try {
            std::vector<Mat> preds;
            if (method == "kefmd") {
                const fs::path mp = dir / "model.json";
                if (!fs::exists(mp))
                    throw IoError("missing model file " + mp.string());
                const LiftedLtiModel model = load_model(mp);
                Predictor p = make_predictor(model);
                if (cfg.system.name == "ex1") {
                    const Mat grid = diffeo_error_grid(model.lift->diffeo(), cfg);
                    p.diagnostics["diffeo_sup_error"] = grid.bottomRows(2).maxCoeff();
                    atomic_write(dir / "diffeo_error.csv", diffeo_error_csv(grid));
                }
                r = evaluate_method(p, eval, &preds);
            } else {
                const fs::path mp = dir / (method + ".json");
                if (!fs::exists(mp))
                    throw IoError("missing model file " + mp.string());
                const auto model = load_edmd_model(mp);
                r = evaluate_method(make_predictor(model, method, cfg.dt), eval, &preds);
            }
            save_predictions(dir / ("pred_" + method + ".csv"), preds, cfg.dt);
            write_rmse_table(dir / ("rmse_" + method + ".csv"), r);
        } catch (const Error& e) {
            r = MethodReport{};
            r.method = method;
            r.error = e.what();
            status = 1;
        }
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.methods.push_back(std::move(r));
    }
    write_json(dir / "report.json", to_json(report));
    for (const auto& m : report.methods) {
        if (m.ok)
            std::printf("%-14s rmse %.6g +- %.6g  D=%ld\n", m.method.c_str(), m.rmse_mean, m.rmse_std,
                        static_cast<long>(m.lifted_dim));
        else
            std::printf("%-14s failed: %s\n", m.method.c_str(), m.error.c_str());
    }
    return status;
}

int cmd_compare(const ExperimentConfig& cfg)
{
    const auto report = run_experiment(cfg, out_dir(cfg), log_line);
    std::cout << compare_csv(report);
    for (const auto& m : report.methods)
        if (!m.ok)
            return 1;
    return 0;
}

int cmd_oracle_check(std::uint64_t seed)
{
    int failed = 0;
    for (const auto& suite : {exact_diffeo_checks(seed), kernel_checks(seed)})
        for (const auto& c : suite) {
            std::printf("%s  %-75s %.3e (tol %.0e)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value, c.tolerance);
            failed += !c.pass;
        }
    std::printf("%d check(s) failed\n", failed);
    return failed ? 1 : 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Koopman eigenfunctions from learned coupling-flow diffeomorphisms"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("generate", "Generate the training dataset");
    auto* trn = app.add_subcommand("train", "Train the flow on the dataset");
    auto* bld = app.add_subcommand("build", "Build the eigenfunction library and lifted models");
    auto* evl = app.add_subcommand("evaluate", "Evaluate built models on the start grid");
    auto* cmp = app.add_subcommand("compare", "Run every requested method end to end and tabulate");
    auto* orc = app.add_subcommand("oracle-check", "Exact-diffeomorphism and finite-difference oracle suites");
    for (auto* c : {gen, trn, bld, evl, cmp, orc})
        add_common(c, o);
    bld->add_flag("--identity", o.identity, "Use the identity map instead of a trained flow");

    CLI11_PARSE(app, argc, argv);

    try {
        if (orc->parsed())
            return cmd_oracle_check(o.seed.value_or(1));
        CLI::App* cmd = app.get_subcommands().front();
        const ExperimentConfig cfg = resolve(o, cmd);
        if (gen->parsed())
            return cmd_generate(cfg);
        if (trn->parsed())
            return cmd_train(cfg);
        if (bld->parsed())
            return cmd_build(cfg, o.identity);
        if (evl->parsed())
            return cmd_evaluate(cfg);
        if (cmp->parsed())
            return cmd_compare(cfg);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
