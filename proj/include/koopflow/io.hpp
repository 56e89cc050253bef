#pragma once

#include "koopflow/baselines.hpp"
#include "koopflow/diffeo_train.hpp"
#include "koopflow/kefmd.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace koopflow {

using Json = nlohmann::json;
namespace fs = std::filesystem;

/// Writes to a sibling temp file, then renames over path.
void atomic_write(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& doc);

Json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const Json& doc);

Json to_json(const FlowModel& flow);
FlowModel flow_from_json(const Json& doc);
void save_flow(const fs::path& path, const FlowModel& flow);
FlowModel load_flow(const fs::path& path);

Json to_json(const VectorFieldSpec& system);
VectorFieldSpec system_from_json(const Json& doc);
Json to_json(const DomainBox& box);
DomainBox box_from_json(const Json& doc);

/// CSV `traj_id,step,t,x_1..x_d,xdot_1..xdot_d` in %.17g, plus a JSON sidecar
/// with system, params, dt, seed and box.
void save_dataset(const fs::path& csv_path, const fs::path& meta_path, const TrajectoryDataset& dataset);
TrajectoryDataset load_dataset(const fs::path& csv_path, const fs::path& meta_path);

/// CSV `epoch,conjugacy,jac0,orig0,total`.
void save_training_log(const fs::path& path, const std::vector<EpochLoss>& history);
std::vector<EpochLoss> load_training_log(const fs::path& path);

/// How a library document names its diffeomorphism:
///   {"kind": "flow", "path": <flow file, relative to the library file>}
///   {"kind": "identity"}
///   {"kind": "exact_ex1", "mu": .., "lambda": ..}
Json flow_reference(const std::string& relative_path);
DiffeoMap resolve_diffeo(const Json& ref, const fs::path& base_dir);

/// Library document: A, lambdas_p, V_A, W, max_powers, radii and the diffeomorphism reference.
void save_library(const fs::path& path, const EigenfunctionLibrary& lib, const Mat& A, const Json& diffeo_ref);
/// Loads the library and resolves the referenced diffeomorphism.
std::shared_ptr<const EigenfunctionLibrary> load_library(const fs::path& path);

/// Model document: lambdas, dt, row-major V, library reference.
void save_model(const fs::path& path, const LiftedLtiModel& model, const std::string& library_ref);
LiftedLtiModel load_model(const fs::path& path);

Json to_json(const Dictionary& dict);
Dictionary dictionary_from_json(const Json& doc);
void save_edmd_model(const fs::path& path, const GeneratorEdmdModel& model);
GeneratorEdmdModel load_edmd_model(const fs::path& path);

/// CSV `traj_id,k,t,xhat_1..xhat_d`; predictions[i] is d x (K+1).
void save_predictions(const fs::path& path, const std::vector<Mat>& predictions, double dt);
std::vector<Mat> load_predictions(const fs::path& path);

/// Row-major nested array and back.
Json matrix_to_json(const Mat& M);
Mat matrix_from_json(const Json& doc);
Json vector_to_json(const Vec& v);
Vec vector_from_json(const Json& doc);

/// Parses a comma-separated file with a header row into columns of doubles.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};
CsvTable read_csv(const fs::path& path);

std::string format_double(double v);

} // namespace koopflow
