#include "koopflow/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace koopflow {

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void atomic_write(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec)
            throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out)
            throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string());
    }
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json(const fs::path& path)
{
    try {
        return Json::parse(read_text(path));
    } catch (const Json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& doc)
{
    atomic_write(path, doc.dump(1) + "\n");
}

Json matrix_to_json(const Mat& M)
{
    Json rows = Json::array();
    for (Index i = 0; i < M.rows(); ++i) {
        Json r = Json::array();
        for (Index j = 0; j < M.cols(); ++j)
            r.push_back(M(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

Mat matrix_from_json(const Json& doc)
{
    if (!doc.is_array())
        throw IoError("expected a nested array for a matrix");
    const Index rows = static_cast<Index>(doc.size());
    const Index cols = rows ? static_cast<Index>(doc[0].size()) : 0;
    Mat M(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const auto& r = doc[static_cast<std::size_t>(i)];
        if (!r.is_array() || static_cast<Index>(r.size()) != cols)
            throw IoError("ragged matrix rows");
        for (Index j = 0; j < cols; ++j)
            M(i, j) = r[static_cast<std::size_t>(j)].get<double>();
    }
    return M;
}

Json vector_to_json(const Vec& v)
{
    return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vec vector_from_json(const Json& doc)
{
    const auto v = doc.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

namespace {

template <typename F>
auto guarded(const std::string& what, F&& f)
{
    try {
        return f();
    } catch (const Json::exception& e) {
        throw IoError(what + ": " + e.what());
    }
}

} // namespace

Json to_json(const DenseNet& net)
{
    Json doc;
    doc["layer_dims"] = std::vector<long>(net.layer_dims().begin(), net.layer_dims().end());
    doc["activation"] = "elu";
    Json layers = Json::array();
    for (const auto& L : net.layers()) {
        Json l;
        const RowMat W = L.weight;
        l["weight"] = std::vector<double>(W.data(), W.data() + W.size());
        l["bias"] = vector_to_json(L.bias);
        layers.push_back(std::move(l));
    }
    doc["layers"] = std::move(layers);
    return doc;
}

DenseNet dense_net_from_json(const Json& doc)
{
    return guarded("network document", [&] {
        if (doc.at("activation").get<std::string>() != "elu")
            throw IoError("network document: unsupported activation");
        const auto dims_l = doc.at("layer_dims").get<std::vector<long>>();
        std::vector<Index> dims(dims_l.begin(), dims_l.end());
        if (dims.size() < 2)
            throw IoError("network document: need at least two layer dims");
        DenseNet net(dims);
        const auto& layers = doc.at("layers");
        if (layers.size() != dims.size() - 1)
            throw IoError("network document: layer count does not match layer_dims");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& L = net.layers()[i];
            const auto w = layers[i].at("weight").get<std::vector<double>>();
            const Vec b = vector_from_json(layers[i].at("bias"));
            if (static_cast<Index>(w.size()) != L.weight.size() || b.size() != L.bias.size())
                throw IoError("network document: layer " + std::to_string(i) + " has wrong shape");
            L.weight = Eigen::Map<const RowMat>(w.data(), L.weight.rows(), L.weight.cols());
            L.bias = b;
        }
        return net;
    });
}

Json to_json(const FlowModel& flow)
{
    Json doc;
    doc["format"] = "koopflow.flow";
    doc["dim"] = flow.dim();
    Json layers = Json::array();
    for (const auto& L : flow.layers()) {
        Json l;
        l["mask"] = L.mask();
        l["s_clamp"] = L.s_clamp();
        l["s_net"] = to_json(L.s_net());
        l["t_net"] = to_json(L.t_net());
        layers.push_back(std::move(l));
    }
    doc["layers"] = std::move(layers);
    return doc;
}

FlowModel flow_from_json(const Json& doc)
{
    return guarded("flow document", [&] {
        std::vector<CouplingLayer> layers;
        for (const auto& l : doc.at("layers"))
            layers.emplace_back(l.at("mask").get<std::vector<bool>>(), dense_net_from_json(l.at("s_net")),
                                dense_net_from_json(l.at("t_net")), l.at("s_clamp").get<double>());
        return FlowModel(std::move(layers));
    });
}

void save_flow(const fs::path& path, const FlowModel& flow)
{
    write_json(path, to_json(flow));
}

FlowModel load_flow(const fs::path& path)
{
    return flow_from_json(read_json(path));
}

Json to_json(const VectorFieldSpec& system)
{
    Json doc;
    doc["name"] = system.name;
    doc["params"] = system.params;
    doc["dim"] = system.dim;
    return doc;
}

VectorFieldSpec system_from_json(const Json& doc)
{
    return guarded("system", [&] {
        VectorFieldSpec s;
        s.name = doc.at("name").get<std::string>();
        s.params = doc.at("params").get<std::map<std::string, double>>();
        validate(s);
        return s;
    });
}

Json to_json(const DomainBox& box)
{
    return Json{{"lo", vector_to_json(box.lo)}, {"hi", vector_to_json(box.hi)}};
}

DomainBox box_from_json(const Json& doc)
{
    return guarded("box", [&] { return make_box(vector_from_json(doc.at("lo")), vector_from_json(doc.at("hi"))); });
}

void save_dataset(const fs::path& csv_path, const fs::path& meta_path, const TrajectoryDataset& dataset)
{
    const Index d = dataset.system.dim;
    std::string out = "traj_id,step,t";
    for (Index j = 1; j <= d; ++j)
        out += ",x_" + std::to_string(j);
    for (Index j = 1; j <= d; ++j)
        out += ",xdot_" + std::to_string(j);
    out += '\n';
    double dt = 0.0;
    for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
        const auto& tr = dataset.trajectories[i];
        dt = tr.dt;
        for (std::size_t k = 0; k < tr.size(); ++k) {
            out += std::to_string(i) + ',' + std::to_string(k) + ',' + format_double(static_cast<double>(k) * tr.dt);
            for (Index j = 0; j < d; ++j)
                out += ',' + format_double(tr.states[k](j));
            for (Index j = 0; j < d; ++j)
                out += ',' + format_double(tr.derivs[k](j));
            out += '\n';
        }
    }
    Json meta;
    meta["format"] = "koopflow.dataset";
    meta["system"] = to_json(dataset.system);
    meta["dt"] = dt;
    meta["seed"] = dataset.seed;
    meta["box"] = to_json(dataset.box);
    meta["trajectories"] = dataset.trajectories.size();
    meta["pairs"] = dataset.pair_count();
    atomic_write(csv_path, out);
    write_json(meta_path, meta);
}

CsvTable read_csv(const fs::path& path)
{
    std::istringstream in(read_text(path));
    CsvTable table;
    std::string line;
    if (!std::getline(in, line))
        throw IoError("empty CSV file " + path.string());
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ','))
            table.header.push_back(cell);
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<double> row;
        row.reserve(table.header.size());
        const char* p = line.c_str();
        while (true) {
            char* end = nullptr;
            const double v = std::strtod(p, &end);
            if (end == p)
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
            row.push_back(v);
            if (*end == '\0')
                break;
            if (*end != ',')
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected ','");
            p = end + 1;
        }
        if (row.size() != table.header.size())
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
        table.rows.push_back(std::move(row));
    }
    return table;
}

TrajectoryDataset load_dataset(const fs::path& csv_path, const fs::path& meta_path)
{
    const Json meta = read_json(meta_path);
    TrajectoryDataset ds;
    double dt = 0.0;
    guarded("dataset metadata " + meta_path.string(), [&] {
        ds.system = system_from_json(meta.at("system"));
        ds.box = box_from_json(meta.at("box"));
        ds.seed = meta.at("seed").get<std::uint64_t>();
        dt = meta.at("dt").get<double>();
        return 0;
    });
    const Index d = ds.system.dim;
    const CsvTable table = read_csv(csv_path);
    if (static_cast<Index>(table.header.size()) != 3 + 2 * d)
        throw IoError(csv_path.string() + ": header does not match system dimension");
    long current = -1;
    for (const auto& row : table.rows) {
        const long id = static_cast<long>(row[0]);
        if (id != current) {
            if (id != current + 1)
                throw IoError(csv_path.string() + ": trajectory ids must be consecutive");
            ds.trajectories.emplace_back();
            ds.trajectories.back().dt = dt;
            current = id;
        }
        auto& tr = ds.trajectories.back();
        tr.states.push_back(Eigen::Map<const Vec>(row.data() + 3, d));
        tr.derivs.push_back(Eigen::Map<const Vec>(row.data() + 3 + d, d));
    }
    return ds;
}

void save_training_log(const fs::path& path, const std::vector<EpochLoss>& history)
{
    std::string out = "epoch,conjugacy,jac0,orig0,total\n";
    for (const auto& e : history)
        out += std::to_string(e.epoch) + ',' + format_double(e.mean.conjugacy) + ',' +
               format_double(e.mean.jacobian_at_origin) + ',' + format_double(e.mean.origin_fixed) + ',' +
               format_double(e.mean.total) + '\n';
    atomic_write(path, out);
}

std::vector<EpochLoss> load_training_log(const fs::path& path)
{
    const CsvTable t = read_csv(path);
    if (t.header.size() != 5)
        throw IoError(path.string() + ": expected 5 columns");
    std::vector<EpochLoss> h;
    for (const auto& r : t.rows)
        h.push_back({static_cast<int>(r[0]), {r[1], r[2], r[3], r[4]}});
    return h;
}

Json flow_reference(const std::string& relative_path)
{
    return Json{{"kind", "flow"}, {"path", relative_path}};
}

DiffeoMap resolve_diffeo(const Json& ref, const fs::path& base_dir)
{
    const std::string kind = guarded("diffeomorphism reference", [&] { return ref.at("kind").get<std::string>(); });
    if (kind == "identity")
        return identity_map();
    if (kind == "exact_ex1")
        return guarded("diffeomorphism reference",
                       [&] { return exact_ex1_map(ref.at("mu").get<double>(), ref.at("lambda").get<double>()); });
    if (kind == "flow") {
        const fs::path p = base_dir / ref.at("path").get<std::string>();
        return flow_map(std::make_shared<const FlowModel>(load_flow(p)));
    }
    throw IoError("unknown diffeomorphism kind '" + kind + "'");
}

void save_library(const fs::path& path, const EigenfunctionLibrary& lib, const Mat& A, const Json& diffeo_ref)
{
    Json doc;
    doc["format"] = "koopflow.library";
    doc["A"] = matrix_to_json(A);
    doc["lambdas_p"] = vector_to_json(lib.principal().lambdas);
    doc["V_A"] = matrix_to_json(lib.principal().right_eigvecs);
    doc["W"] = matrix_to_json(lib.principal().adjoint_basis);
    doc["max_powers"] = lib.library().max_powers;
    doc["radii"] = vector_to_json(lib.scaling().radius);
    doc["diffeo"] = diffeo_ref;
    write_json(path, doc);
}

std::shared_ptr<const EigenfunctionLibrary> load_library(const fs::path& path)
{
    const Json doc = read_json(path);
    return guarded("library document " + path.string(), [&] {
        PrincipalEigenpairs pe;
        pe.lambdas = vector_from_json(doc.at("lambdas_p"));
        pe.right_eigvecs = matrix_from_json(doc.at("V_A"));
        pe.adjoint_basis = matrix_from_json(doc.at("W"));
        auto lib = enumerate_library(pe.lambdas, doc.at("max_powers").get<std::vector<int>>());
        BoxScaling g{vector_from_json(doc.at("radii"))};
        return std::make_shared<const EigenfunctionLibrary>(std::move(pe), std::move(lib), std::move(g),
                                                            resolve_diffeo(doc.at("diffeo"), path.parent_path()));
    });
}

void save_model(const fs::path& path, const LiftedLtiModel& model, const std::string& library_ref)
{
    Json doc;
    doc["format"] = "koopflow.model";
    doc["lambdas"] = vector_to_json(model.lambdas);
    doc["dt"] = model.dt;
    doc["V"] = matrix_to_json(model.V);
    doc["library"] = library_ref;
    doc["fit"] = {{"rank", model.fit.rank},
                  {"unknowns", model.fit.unknowns},
                  {"rank_deficient", model.fit.rank_deficient},
                  {"residual_rms", model.fit.residual_rms}};
    write_json(path, doc);
}

LiftedLtiModel load_model(const fs::path& path)
{
    const Json doc = read_json(path);
    LiftedLtiModel m;
    std::string lib_ref;
    guarded("model document " + path.string(), [&] {
        m.lambdas = vector_from_json(doc.at("lambdas"));
        m.dt = doc.at("dt").get<double>();
        m.V = matrix_from_json(doc.at("V"));
        lib_ref = doc.at("library").get<std::string>();
        if (doc.contains("fit")) {
            const auto& f = doc["fit"];
            m.fit.rank = f.at("rank").get<Index>();
            m.fit.unknowns = f.at("unknowns").get<Index>();
            m.fit.rank_deficient = f.at("rank_deficient").get<bool>();
            m.fit.residual_rms = f.at("residual_rms").get<double>();
        }
        return 0;
    });
    m.lambdas_discrete = discretize(m.lambdas, m.dt);
    m.lift = load_library(path.parent_path() / lib_ref);
    if (m.lift->lifted_dim() != m.lambdas.size() || m.V.cols() != m.lambdas.size())
        throw IoError("model document " + path.string() + ": lifted dimension mismatch with its library");
    if (m.lift->lambdas() != m.lambdas)
        throw IoError("model document " + path.string() + ": eigenvalues differ from its library");
    return m;
}

Json to_json(const Dictionary& dict)
{
    Json doc;
    doc["kind"] = to_string(dict.kind);
    doc["dim"] = dict.dim;
    if (dict.kind == DictionaryKind::monomial) {
        doc["max_degree"] = dict.max_degree;
        doc["tensor"] = dict.tensor;
        doc["scale"] = vector_to_json(dict.scale);
    } else {
        doc["centers"] = matrix_to_json(dict.centers);
        doc["gamma"] = dict.gamma;
    }
    return doc;
}

Dictionary dictionary_from_json(const Json& doc)
{
    return guarded("dictionary", [&] {
        const auto kind = doc.at("kind").get<std::string>();
        if (kind == "monomial")
            return monomial_dictionary(doc.at("dim").get<Index>(), doc.at("max_degree").get<int>(),
                                       doc.at("tensor").get<bool>(), vector_from_json(doc.at("scale")));
        if (kind == "rbf")
            return rbf_dictionary(matrix_from_json(doc.at("centers")), doc.at("gamma").get<double>());
        throw IoError("unknown dictionary kind '" + kind + "'");
    });
}

void save_edmd_model(const fs::path& path, const GeneratorEdmdModel& model)
{
    Json doc;
    doc["format"] = "koopflow.edmd";
    doc["dictionary"] = to_json(model.dict);
    doc["L"] = matrix_to_json(model.L);
    doc["C"] = matrix_to_json(model.C);
    write_json(path, doc);
}

GeneratorEdmdModel load_edmd_model(const fs::path& path)
{
    const Json doc = read_json(path);
    return guarded("EDMD model " + path.string(), [&] {
        GeneratorEdmdModel m;
        m.dict = dictionary_from_json(doc.at("dictionary"));
        m.L = matrix_from_json(doc.at("L"));
        m.C = matrix_from_json(doc.at("C"));
        if (m.L.rows() != m.dict.size() || m.L.cols() != m.dict.size() || m.C.cols() != m.dict.size())
            throw IoError("EDMD model: matrix shapes do not match the dictionary");
        return m;
    });
}

void save_predictions(const fs::path& path, const std::vector<Mat>& predictions, double dt)
{
    const Index d = predictions.empty() ? 0 : predictions.front().rows();
    std::string out = "traj_id,k,t";
    for (Index j = 1; j <= d; ++j)
        out += ",xhat_" + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const Mat& P = predictions[i];
        for (Index k = 0; k < P.cols(); ++k) {
            out += std::to_string(i) + ',' + std::to_string(k) + ',' + format_double(static_cast<double>(k) * dt);
            for (Index j = 0; j < P.rows(); ++j)
                out += ',' + format_double(P(j, k));
            out += '\n';
        }
    }
    atomic_write(path, out);
}

std::vector<Mat> load_predictions(const fs::path& path)
{
    const CsvTable t = read_csv(path);
    if (t.header.size() < 4 || t.header[0] != "traj_id" || t.header[1] != "k" || t.header[2] != "t")
        throw IoError(path.string() + ": not a prediction CSV");
    const Index d = static_cast<Index>(t.header.size()) - 3;
    std::vector<std::vector<Vec>> cols;
    for (const auto& r : t.rows) {
        const auto id = static_cast<std::size_t>(r[0]);
        if (id >= cols.size())
            cols.resize(id + 1);
        cols[id].push_back(Eigen::Map<const Vec>(r.data() + 3, d));
    }
    std::vector<Mat> out;
    for (const auto& c : cols) {
        Mat P(d, static_cast<Index>(c.size()));
        for (std::size_t k = 0; k < c.size(); ++k)
            P.col(static_cast<Index>(k)) = c[k];
        out.push_back(std::move(P));
    }
    return out;
}

} // namespace koopflow
