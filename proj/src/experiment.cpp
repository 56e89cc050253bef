#include "koopflow/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <set>
#include <thread>

namespace koopflow {

ExperimentConfig preset(const std::string& name)
{
    ExperimentConfig c;
    c.name = name;
    c.train.residual_form = ResidualForm::inverse_jacobian;
    c.train.lr = 3e-4;
    c.train.lr_final = 1e-5;
    c.train.loss_weights.relative_eps = 1e-2;
    if (name == "ex1") {
        c.system = make_ex1(-0.7, -0.3);
        c.box = symmetric_box(2, 5.0);
        c.n_train_trajectories = 24;
        c.dt = 0.065;
        c.steps = 199;
        c.max_powers = {5, 5};
        c.train.epochs = 200;
        c.edmd.monomial_degree = 5;
        c.edmd.rbf_lifted_dim = 36;
        return c;
    }
    if (name == "ex3") {
        c.system = make_ex3(-1.3, -2.0, 1.5);
        c.box = symmetric_box(2, 5.5);
        c.n_train_trajectories = 56;
        c.dt = 0.015;
        c.steps = 199;
        c.max_powers = {13, 13};
        c.kefmd_ridge = 1e-8;
        c.domain_samples = 2000;
        c.train.epochs = 400;
        c.edmd.monomial_degree = 8;
        c.edmd.rbf_lifted_dim = 196;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (known: ex1, ex3)");
}

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const Json& obj, std::string where) : obj_(obj), where_(std::move(where))
    {
        if (!obj_.is_object())
            throw ConfigError(where_ + ": expected an object");
    }

    template <typename T>
    void get(const std::string& key, T& out)
    {
        seen_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end())
            return;
        try {
            out = it->template get<T>();
        } catch (const Json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    const Json* child(const std::string& key)
    {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const Json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

std::vector<double> vec_std(const Vec& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vec vec_eigen(const std::vector<double>& v)
{
    return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

} // namespace

ExperimentConfig config_from_json(const Json& doc)
{
    ObjectReader top(doc, "config");
    std::string base = "ex1";
    top.get("preset", base);
    ExperimentConfig c = preset(base);
    top.get("name", c.name);

    if (const Json* s = top.child("system")) {
        ObjectReader r(*s, "config.system");
        VectorFieldSpec sys;
        sys.name = c.system.name;
        r.get("name", sys.name);
        if (sys.name == c.system.name)
            sys.params = c.system.params;
        std::map<std::string, double> params;
        r.get("params", params);
        for (const auto& [k, v] : params)
            sys.params[k] = v;
        r.finish();
        c.system = sys;
    }
    if (const Json* b = top.child("box")) {
        ObjectReader r(*b, "config.box");
        std::vector<double> lo = vec_std(c.box.lo), hi = vec_std(c.box.hi);
        double half = 0.0;
        r.get("half_width", half);
        r.get("lo", lo);
        r.get("hi", hi);
        r.finish();
        if (half > 0.0) {
            lo.assign(lo.size(), -half);
            hi.assign(hi.size(), half);
        }
        c.box.lo = vec_eigen(lo);
        c.box.hi = vec_eigen(hi);
    }
    if (const Json* d = top.child("data")) {
        ObjectReader r(*d, "config.data");
        r.get("n_trajectories", c.n_train_trajectories);
        r.get("dt", c.dt);
        r.get("steps", c.steps);
        r.get("max_pairs", c.max_pairs);
        r.finish();
    }
    if (const Json* l = top.child("library")) {
        ObjectReader r(*l, "config.library");
        r.get("max_powers", c.max_powers);
        r.get("box_margin", c.box_margin);
        r.get("ridge", c.kefmd_ridge);
        r.get("domain_samples", c.domain_samples);
        r.finish();
    }
    if (const Json* f = top.child("flow")) {
        ObjectReader r(*f, "config.flow");
        std::string activation = "elu";
        std::vector<long> hidden(c.flow.hidden.begin(), c.flow.hidden.end());
        r.get("layers", c.flow.layers);
        r.get("hidden", hidden);
        r.get("activation", activation);
        r.get("s_clamp", c.flow.s_clamp);
        r.finish();
        if (activation != "elu")
            throw ConfigError("config.flow.activation: only 'elu' is supported");
        c.flow.hidden.assign(hidden.begin(), hidden.end());
    }
    if (const Json* t = top.child("train")) {
        ObjectReader r(*t, "config.train");
        std::string form = to_string(c.train.residual_form);
        r.get("batch_size", c.train.batch_size);
        r.get("epochs", c.train.epochs);
        r.get("lr", c.train.lr);
        r.get("lr_final", c.train.lr_final);
        r.get("residual_form", form);
        r.get("plateau_patience", c.train.plateau_patience);
        r.get("plateau_tol", c.train.plateau_tol);
        r.get("checkpoint_every", c.checkpoint_every);
        if (const Json* w = r.child("loss_weights")) {
            ObjectReader rw(*w, "config.train.loss_weights");
            rw.get("conjugacy", c.train.loss_weights.conjugacy);
            rw.get("jacobian_at_origin", c.train.loss_weights.jacobian_at_origin);
            rw.get("origin_fixed", c.train.loss_weights.origin_fixed);
            rw.get("relative_eps", c.train.loss_weights.relative_eps);
            rw.finish();
        }
        r.finish();
        c.train.residual_form = parse_residual_form(form);
    }
    if (const Json* e = top.child("edmd")) {
        ObjectReader r(*e, "config.edmd");
        r.get("monomial_degree", c.edmd.monomial_degree);
        r.get("monomial_tensor", c.edmd.monomial_tensor);
        r.get("rbf_lifted_dim", c.edmd.rbf_lifted_dim);
        r.get("ridge", c.edmd.ridge);
        r.finish();
    }
    if (const Json* e = top.child("eval")) {
        ObjectReader r(*e, "config.eval");
        r.get("grid", c.eval_grid);
        r.get("horizon", c.eval_horizon);
        r.get("diffeo_grid", c.diffeo_grid);
        r.finish();
    }
    top.get("methods", c.methods);
    top.get("seed", c.seed);
    top.get("output_dir", c.output_dir);
    top.finish();
    validate(c);
    return c;
}

Json to_json(const ExperimentConfig& c)
{
    Json doc;
    doc["name"] = c.name;
    doc["system"] = {{"name", c.system.name}, {"params", c.system.params}};
    doc["box"] = {{"lo", vec_std(c.box.lo)}, {"hi", vec_std(c.box.hi)}};
    doc["data"] = {{"n_trajectories", c.n_train_trajectories},
                   {"dt", c.dt},
                   {"steps", c.steps},
                   {"max_pairs", c.max_pairs}};
    doc["library"] = {{"max_powers", c.max_powers},
                      {"box_margin", c.box_margin},
                      {"ridge", c.kefmd_ridge},
                      {"domain_samples", c.domain_samples}};
    doc["flow"] = {{"layers", c.flow.layers},
                   {"hidden", std::vector<long>(c.flow.hidden.begin(), c.flow.hidden.end())},
                   {"activation", "elu"},
                   {"s_clamp", c.flow.s_clamp}};
    doc["train"] = {{"batch_size", c.train.batch_size},
                    {"epochs", c.train.epochs},
                    {"lr", c.train.lr},
                    {"lr_final", c.train.lr_final},
                    {"residual_form", to_string(c.train.residual_form)},
                    {"plateau_patience", c.train.plateau_patience},
                    {"plateau_tol", c.train.plateau_tol},
                    {"checkpoint_every", c.checkpoint_every},
                    {"loss_weights",
                     {{"conjugacy", c.train.loss_weights.conjugacy},
                      {"jacobian_at_origin", c.train.loss_weights.jacobian_at_origin},
                      {"origin_fixed", c.train.loss_weights.origin_fixed},
                      {"relative_eps", c.train.loss_weights.relative_eps}}}};
    doc["edmd"] = {{"monomial_degree", c.edmd.monomial_degree},
                   {"monomial_tensor", c.edmd.monomial_tensor},
                   {"rbf_lifted_dim", c.edmd.rbf_lifted_dim},
                   {"ridge", c.edmd.ridge}};
    doc["eval"] = {{"grid", c.eval_grid}, {"horizon", c.eval_horizon}, {"diffeo_grid", c.diffeo_grid}};
    doc["methods"] = c.methods;
    doc["seed"] = c.seed;
    doc["output_dir"] = c.output_dir;
    return doc;
}

ExperimentConfig load_config(const fs::path& path)
{
    return config_from_json(read_json(path));
}

void validate(ExperimentConfig& c)
{
    validate(c.system);
    c.box = make_box(c.box.lo, c.box.hi);
    if (c.box.dim() != c.system.dim)
        throw ConfigError("config: box dimension does not match the system");
    if (c.n_train_trajectories < 1)
        throw ConfigError("config: n_trajectories must be >= 1");
    if (!(c.dt > 0.0) || c.steps < 1)
        throw ConfigError("config: need dt > 0 and steps >= 1");
    if (static_cast<Index>(c.max_powers.size()) != c.system.dim)
        throw ConfigError("config: max_powers needs one entry per state dimension");
    for (int p : c.max_powers)
        if (p < 0)
            throw ConfigError("config: max_powers must be non-negative");
    if (!(c.box_margin >= 1.0))
        throw ConfigError("config: box_margin must be >= 1");
    if (c.kefmd_ridge < 0.0 || c.edmd.ridge < 0.0)
        throw ConfigError("config: ridge must be non-negative");
    if (c.domain_samples < 0)
        throw ConfigError("config: domain_samples must be non-negative");
    if (c.flow.layers < 1 || c.flow.hidden.empty() || !(c.flow.s_clamp > 0.0))
        throw ConfigError("config: flow needs >= 1 layer, >= 1 hidden layer and s_clamp > 0");
    for (Index h : c.flow.hidden)
        if (h < 1)
            throw ConfigError("config: hidden widths must be positive");
    c.flow.dim = c.system.dim;
    validate(c.train);
    if (c.checkpoint_every < 0)
        throw ConfigError("config: checkpoint_every must be >= 0");
    if (c.edmd.monomial_degree < 0 || c.edmd.rbf_lifted_dim < c.system.dim + 2)
        throw ConfigError("config: invalid EDMD dictionary size");
    if (c.eval_grid < 2 || c.eval_horizon < 0 || c.diffeo_grid < 2)
        throw ConfigError("config: eval grid must be >= 2 and horizon >= 0");
    std::set<std::string> seen;
    for (const auto& m : c.methods) {
        if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end())
            throw ConfigError("config: unknown method '" + m + "'");
        if (!seen.insert(m).second)
            throw ConfigError("config: method '" + m + "' listed twice");
    }
}

void apply_scale(ExperimentConfig& cfg, double s)
{
    if (!(s > 0.0))
        throw ConfigError("scale must be positive");
    cfg.n_train_trajectories = std::max(1, static_cast<int>(std::lround(cfg.n_train_trajectories * s)));
    cfg.train.epochs = std::max(1, static_cast<int>(std::lround(cfg.train.epochs * s)));
    if (cfg.max_pairs > 0)
        cfg.max_pairs = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.max_pairs * s)));
}

SeedPlan seed_plan(std::uint64_t seed)
{
    Rng r(seed);
    SeedPlan p;
    p.data = r.next();
    p.flow_init = r.next();
    p.shuffle = r.next();
    p.rbf_centers = r.next();
    p.domain_samples = r.next();
    return p;
}

int thread_count()
{
    if (const char* env = std::getenv("KOOPFLOW_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1)
            return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn)
{
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

TrajectoryDataset make_dataset(const ExperimentConfig& cfg)
{
    const auto seeds = seed_plan(cfg.seed);
    auto ds = generate_dataset(cfg.system, cfg.box, boundary_starts(cfg.box, cfg.n_train_trajectories, seeds.data),
                               cfg.dt, cfg.steps, cfg.max_pairs);
    ds.seed = cfg.seed;
    return ds;
}

TrainResult train_flow(const ExperimentConfig& cfg, const TrajectoryDataset& dataset, const fs::path& checkpoint_dir,
                       const EpochCallback& on_epoch)
{
    const auto seeds = seed_plan(cfg.seed);
    FlowArchitecture arch = cfg.flow;
    arch.dim = cfg.system.dim;
    TrainConfig tc = cfg.train;
    tc.seed = seeds.shuffle;
    const Mat A = jacobian_linearization(cfg.system);
    auto cb = [&](const EpochLoss& e, const FlowModel& f) {
        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (e.epoch + 1) % cfg.checkpoint_every == 0)
            save_flow(checkpoint_dir / ("flow_epoch_" + std::to_string(e.epoch + 1) + ".json"), f);
        if (on_epoch)
            on_epoch(e, f);
    };
    return train(FlowModel::identity_initialized(arch, seeds.flow_init), dataset, A, tc, cb);
}

LiftedLtiModel build_kefmd_model(const ExperimentConfig& cfg, DiffeoMap diffeo, const TrajectoryDataset& dataset)
{
    const Mat A = jacobian_linearization(cfg.system);
    Mat X = dataset.states_matrix();
    if (cfg.domain_samples > 0) {
        const Mat S = uniform_box_samples(cfg.box, cfg.domain_samples, seed_plan(cfg.seed).domain_samples);
        X.conservativeResize(Eigen::NoChange, X.cols() + S.cols());
        X.rightCols(S.cols()) = S;
    }
    auto lib = std::make_shared<const EigenfunctionLibrary>(
        build_eigenfunction_library(A, cfg.max_powers, std::move(diffeo), X, cfg.box_margin));
    return build_kefmd(lib, X, cfg.dt, cfg.kefmd_ridge);
}

GeneratorEdmdModel build_edmd_model(const ExperimentConfig& cfg, const std::string& method,
                                    const TrajectoryDataset& dataset)
{
    if (method == "edmd_monomial")
        return fit_generator_edmd(
            dataset, monomial_dictionary(cfg.system.dim, cfg.edmd.monomial_degree, cfg.edmd.monomial_tensor),
            cfg.edmd.ridge);
    if (method == "edmd_rbf")
        return fit_generator_edmd(dataset, rbf_from_data(dataset, cfg.edmd.rbf_lifted_dim, seed_plan(cfg.seed).rbf_centers),
                                  cfg.edmd.ridge);
    throw ConfigError("not an EDMD method: '" + method + "'");
}

Predictor make_predictor(const LiftedLtiModel& model)
{
    Predictor p;
    p.method = "kefmd";
    p.lifted_dim = model.lifted_dim();
    p.predict = [&model](const Vec& x0, int k) { return predict_trajectory(model, x0, k); };
    p.diagnostics["spectral_abscissa"] = model.lambdas.maxCoeff();
    p.diagnostics["reconstruction_residual"] = model.fit.residual_rms;
    p.diagnostics["reconstruction_rank"] = model.fit.rank;
    p.diagnostics["constant_mode_norm"] = constant_mode(model).norm();
    return p;
}

Predictor make_predictor(const GeneratorEdmdModel& model, const std::string& method, double dt)
{
    Predictor p;
    p.method = method;
    p.lifted_dim = model.dict.size();
    const auto E = std::make_shared<const Mat>(expm(model.L * dt));
    p.predict = [&model, E](const Vec& x0, int k) {
        Mat out(model.C.rows(), k + 1);
        Vec psi = dict_eval(model.dict, x0);
        for (int i = 0; i <= k; ++i) {
            out.col(i) = model.C * psi;
            psi = *E * psi;
        }
        return out;
    };
    p.diagnostics["spectral_abscissa"] = spectral_abscissa(model.L);
    p.diagnostics["reconstruction_residual"] = model.fit_reconstruction.residual_rms;
    p.diagnostics["generator_residual"] = model.fit_generator.residual_rms;
    return p;
}

const MethodReport* EvalReport::find(const std::string& method) const
{
    for (const auto& m : methods)
        if (m.method == method)
            return &m;
    return nullptr;
}

Json to_json(const EvalReport& report, bool include_timing)
{
    Json doc;
    doc["experiment"] = report.experiment;
    Json methods = Json::array();
    for (const auto& m : report.methods) {
        Json j;
        j["method"] = m.method;
        j["ok"] = m.ok;
        if (!m.ok)
            j["error"] = m.error;
        j["rmse_mean"] = m.rmse_mean;
        j["rmse_std"] = m.rmse_std;
        j["lifted_dim"] = m.lifted_dim;
        if (include_timing)
            j["wall_time"] = m.wall_time;
        j["rmse_per_trajectory"] = m.rmse_per_trajectory;
        j["diagnostics"] = m.diagnostics;
        methods.push_back(std::move(j));
    }
    doc["methods"] = std::move(methods);
    return doc;
}

EvalSet make_eval_set(const ExperimentConfig& cfg)
{
    EvalSet e;
    e.starts = grid_starts(cfg.box, cfg.eval_grid);
    e.truth.resize(e.starts.size());
    parallel_for(e.starts.size(), [&](std::size_t i) {
        const auto tr = integrate(cfg.system, e.starts[i], cfg.dt, cfg.eval_horizon);
        Mat T(cfg.system.dim, static_cast<Index>(tr.size()));
        for (std::size_t k = 0; k < tr.size(); ++k)
            T.col(static_cast<Index>(k)) = tr.states[k];
        e.truth[i] = std::move(T);
    });
    return e;
}

double trajectory_rmse(const Mat& predicted, const Mat& truth)
{
    if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
        throw ConfigError("trajectory_rmse: shape mismatch");
    return std::sqrt((predicted - truth).squaredNorm() / static_cast<double>(truth.size()));
}

MethodReport evaluate_method(const Predictor& p, const EvalSet& eval, std::vector<Mat>* predictions)
{
    MethodReport r;
    r.method = p.method;
    r.lifted_dim = p.lifted_dim;
    r.diagnostics = p.diagnostics;
    const std::size_t n = eval.starts.size();
    std::vector<Mat> preds(n);
    r.rmse_per_trajectory.assign(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        preds[i] = p.predict(eval.starts[i], static_cast<int>(eval.truth[i].cols()) - 1);
        r.rmse_per_trajectory[i] = trajectory_rmse(preds[i], eval.truth[i]);
    });
    double s = 0.0;
    for (double v : r.rmse_per_trajectory)
        s += v;
    r.rmse_mean = n ? s / static_cast<double>(n) : 0.0;
    double v2 = 0.0;
    for (double v : r.rmse_per_trajectory)
        v2 += (v - r.rmse_mean) * (v - r.rmse_mean);
    r.rmse_std = n ? std::sqrt(v2 / static_cast<double>(n)) : 0.0;
    r.ok = std::isfinite(r.rmse_mean);
    if (!r.ok)
        r.error = "non-finite prediction";
    if (predictions)
        *predictions = std::move(preds);
    return r;
}

Mat diffeo_error_grid(const DiffeoMap& diffeo, const ExperimentConfig& cfg)
{
    if (cfg.system.name != "ex1")
        throw ConfigError("diffeo_error_grid: exact diffeomorphism only known for ex1");
    const double mu = cfg.system.param("mu"), lambda = cfg.system.param("lambda");
    const auto pts = grid_starts(cfg.box, cfg.diffeo_grid);
    Mat out(4, static_cast<Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec& x = pts[i];
        out.col(static_cast<Index>(i)) << x, (diffeo(x) - exact_diffeo_ex1(x, mu, lambda)).cwiseAbs();
    }
    return out;
}

std::string diffeo_error_csv(const Mat& grid)
{
    std::string csv = "x_1,x_2,err_1,err_2\n";
    for (Index i = 0; i < grid.cols(); ++i)
        csv += format_double(grid(0, i)) + ',' + format_double(grid(1, i)) + ',' + format_double(grid(2, i)) + ',' +
               format_double(grid(3, i)) + '\n';
    return csv;
}

EvalReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                          const std::function<void(const std::string&)>& log)
{
    auto say = [&](const std::string& s) {
        if (log)
            log(s);
    };
    EvalReport report;
    report.experiment = cfg.name;
    if (cfg.methods.empty())
        return report;

    const TrajectoryDataset ds = make_dataset(cfg);
    say("dataset: " + std::to_string(ds.pair_count()) + " pairs");
    if (!out_dir.empty())
        save_dataset(out_dir / "dataset.csv", out_dir / "dataset.meta.json", ds);
    const EvalSet eval = make_eval_set(cfg);

    for (const auto& method : cfg.methods) {
        MethodReport r;
        r.method = method;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            std::vector<Mat> preds;
            if (method == "kefmd") {
                auto tr = train_flow(cfg, ds, out_dir.empty() ? fs::path{} : out_dir / "checkpoints",
                                     [&](const EpochLoss& e, const FlowModel&) {
                                         if (e.epoch % 10 == 0 || e.epoch + 1 == cfg.train.epochs)
                                             say("epoch " + std::to_string(e.epoch) + " loss " +
                                                 format_double(e.mean.total));
                                     });
                auto flow = std::make_shared<const FlowModel>(std::move(tr.flow));
                const LiftedLtiModel model = build_kefmd_model(cfg, flow_map(flow), ds);
                if (model.fit.rank_deficient)
                    say("warning: KEFMD reconstruction is rank deficient");
                Predictor p = make_predictor(model);
                if (!tr.history.empty()) {
                    p.diagnostics["final_conjugacy_loss"] = tr.history.back().mean.conjugacy;
                    p.diagnostics["final_total_loss"] = tr.history.back().mean.total;
                }
                Mat grid;
                if (cfg.system.name == "ex1") {
                    grid = diffeo_error_grid(flow_map(flow), cfg);
                    p.diagnostics["diffeo_sup_error"] = grid.bottomRows(2).maxCoeff();
                }
                r = evaluate_method(p, eval, &preds);
                if (!out_dir.empty()) {
                    save_flow(out_dir / "flow.json", *flow);
                    save_training_log(out_dir / "train_log.csv", tr.history);
                    save_library(out_dir / "library.json", *model.lift, jacobian_linearization(cfg.system),
                                 flow_reference("flow.json"));
                    save_model(out_dir / "model.json", model, "library.json");
                    if (grid.size())
                        atomic_write(out_dir / "diffeo_error.csv", diffeo_error_csv(grid));
                }
            } else {
                const GeneratorEdmdModel model = build_edmd_model(cfg, method, ds);
                if (model.fit_generator.rank < model.dict.size())
                    say("warning: " + method + " generator fit is rank deficient");
                r = evaluate_method(make_predictor(model, method, cfg.dt), eval, &preds);
                if (!out_dir.empty())
                    save_edmd_model(out_dir / (method + ".json"), model);
            }
            if (!out_dir.empty())
                save_predictions(out_dir / ("pred_" + method + ".csv"), preds, cfg.dt);
        } catch (const Error& e) {
            r = MethodReport{};
            r.method = method;
            r.ok = false;
            r.error = e.what();
        }
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        say(method + ": " + (r.ok ? "rmse " + format_double(r.rmse_mean) : "failed: " + r.error));
        report.methods.push_back(std::move(r));
    }
    if (!out_dir.empty()) {
        write_json(out_dir / "report.json", to_json(report));
        atomic_write(out_dir / "compare.csv", compare_csv(report));
        write_json(out_dir / "compare.json", compare_json(report));
    }
    return report;
}

std::string compare_csv(const EvalReport& report)
{
    std::string out = "method,rmse_mean,rmse_std,lifted_dim\n";
    for (const auto& m : report.methods)
        out += m.method + ',' + (m.ok ? format_double(m.rmse_mean) : "nan") + ',' +
               (m.ok ? format_double(m.rmse_std) : "nan") + ',' + std::to_string(m.lifted_dim) + '\n';
    return out;
}

Json compare_json(const EvalReport& report)
{
    Json rows = Json::array();
    for (const auto& m : report.methods) {
        Json r{{"method", m.method}, {"lifted_dim", m.lifted_dim}, {"ok", m.ok}};
        if (m.ok) {
            r["rmse_mean"] = m.rmse_mean;
            r["rmse_std"] = m.rmse_std;
        } else {
            r["rmse_mean"] = nullptr;
            r["rmse_std"] = nullptr;
            r["error"] = m.error;
        }
        rows.push_back(std::move(r));
    }
    return Json{{"experiment", report.experiment}, {"methods", rows}};
}

} // namespace koopflow
