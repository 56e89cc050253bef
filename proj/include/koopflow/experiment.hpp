#pragma once

#include "koopflow/io.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace koopflow {

inline const std::vector<std::string> kMethods = {"kefmd", "edmd_monomial", "edmd_rbf"};

struct EdmdSettings {
    int monomial_degree = 5;
    bool monomial_tensor = true;
    Index rbf_lifted_dim = 36;
    double ridge = 1e-8;
};

struct ExperimentConfig {
    std::string name = "custom";
    VectorFieldSpec system;
    DomainBox box;
    int n_train_trajectories = 24;
    double dt = 0.065;
    int steps = 199;
    std::size_t max_pairs = 0; // 0 keeps every pair
    std::vector<int> max_powers{5, 5};
    double box_margin = 1.05;
    double kefmd_ridge = 0.0;
    /// Uniform box samples added to the training states for the scaling and V fits.
    Index domain_samples = 0;
    FlowArchitecture flow;
    TrainConfig train;
    int checkpoint_every = 0; // epochs between flow checkpoints; 0 disables
    EdmdSettings edmd;
    int eval_grid = 10;
    int eval_horizon = 200;
    int diffeo_grid = 50;
    std::vector<std::string> methods = kMethods;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
};

ExperimentConfig preset(const std::string& name);
/// Throws ConfigError on unknown keys, wrong types or invalid values.
ExperimentConfig config_from_json(const Json& doc);
Json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const fs::path& path);
void validate(ExperimentConfig& cfg);

/// Scales the trajectory count and epoch count by s (at least 1 each).
void apply_scale(ExperimentConfig& cfg, double s);

/// Seeds of the independent random streams, all derived from cfg.seed.
struct SeedPlan {
    std::uint64_t data;
    std::uint64_t flow_init;
    std::uint64_t shuffle;
    std::uint64_t rbf_centers;
    std::uint64_t domain_samples;
};
SeedPlan seed_plan(std::uint64_t seed);

/// Number of worker threads: KOOPFLOW_THREADS if set, else hardware concurrency.
int thread_count();
/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Results must go to per-index slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

TrajectoryDataset make_dataset(const ExperimentConfig& cfg);

/// Trains the flow; writes checkpoints into checkpoint_dir when enabled and non-empty.
TrainResult train_flow(const ExperimentConfig& cfg, const TrajectoryDataset& dataset,
                       const fs::path& checkpoint_dir = {}, const EpochCallback& on_epoch = {});

/// Library and V fitted on the dataset states plus cfg.domain_samples uniform box samples.
LiftedLtiModel build_kefmd_model(const ExperimentConfig& cfg, DiffeoMap diffeo, const TrajectoryDataset& dataset);
GeneratorEdmdModel build_edmd_model(const ExperimentConfig& cfg, const std::string& method,
                                    const TrajectoryDataset& dataset);

/// A fitted method ready for prediction.
struct Predictor {
    std::string method;
    Index lifted_dim = 0;
    std::function<Mat(const Vec& x0, int k_steps)> predict;
    Json diagnostics;
};

Predictor make_predictor(const LiftedLtiModel& model);
Predictor make_predictor(const GeneratorEdmdModel& model, const std::string& method, double dt);

struct MethodReport {
    std::string method;
    bool ok = false;
    std::string error;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    Index lifted_dim = 0;
    double wall_time = 0.0;
    std::vector<double> rmse_per_trajectory;
    Json diagnostics = Json::object();
};

struct EvalReport {
    std::string experiment;
    std::vector<MethodReport> methods;

    const MethodReport* find(const std::string& method) const;
};

Json to_json(const EvalReport& report, bool include_timing = true);

/// Grid starts of the evaluation protocol and their RK4 ground truth (d x (H+1) each).
struct EvalSet {
    std::vector<Vec> starts;
    std::vector<Mat> truth;
};
EvalSet make_eval_set(const ExperimentConfig& cfg);

/// Per-trajectory RMSE pooled over steps 0..H and all state dimensions.
double trajectory_rmse(const Mat& predicted, const Mat& truth);

/// Evaluates one predictor on the grid; predictions are returned when requested.
MethodReport evaluate_method(const Predictor& p, const EvalSet& eval, std::vector<Mat>* predictions = nullptr);

/// Per-dimension |d(x) - d_exact(x)| on an n x n lattice over the box (ex1 only).
/// Rows: x_1, x_2, err_1, err_2.
Mat diffeo_error_grid(const DiffeoMap& diffeo, const ExperimentConfig& cfg);
/// CSV `x_1,x_2,err_1,err_2` of a diffeo_error_grid result.
std::string diffeo_error_csv(const Mat& grid);

/// Runs the requested methods end to end. A method that throws is reported with ok = false.
/// When out_dir is non-empty, artifacts are written there.
EvalReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir = {},
                          const std::function<void(const std::string&)>& log = {});

/// CSV and JSON table `method,rmse_mean,rmse_std,lifted_dim`.
std::string compare_csv(const EvalReport& report);
Json compare_json(const EvalReport& report);

} // namespace koopflow
