#include "koopflow/dense_net.hpp"

#include <cmath>

namespace koopflow {

DenseNet::DenseNet(std::vector<Index> layer_dims) : dims_(std::move(layer_dims))
{
    if (dims_.size() < 2)
        throw ConfigError("DenseNet needs at least input and output dimensions");
    for (Index d : dims_)
        if (d < 1)
            throw ConfigError("DenseNet layer dimensions must be positive");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
        layers_.push_back({Mat::Zero(dims_[l + 1], dims_[l]), Vec::Zero(dims_[l + 1])});
}

DenseNet DenseNet::he_initialized(std::vector<Index> layer_dims, Rng& rng, bool zero_output)
{
    DenseNet net(std::move(layer_dims));
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
        if (zero_output && l + 1 == net.layers_.size())
            break;
        auto& W = net.layers_[l].weight;
        const double scale = std::sqrt(2.0 / static_cast<double>(W.cols()));
        for (Index i = 0; i < W.rows(); ++i)
            for (Index j = 0; j < W.cols(); ++j)
                W(i, j) = scale * rng.normal();
    }
    return net;
}

Vec DenseNet::forward(const Vec& x) const
{
    if (x.size() != input_dim())
        throw ConfigError("DenseNet::forward: input dimension mismatch");
    Vec u = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Vec h = layers_[l].weight * u + layers_[l].bias;
        if (l + 1 < layers_.size())
            h = h.unaryExpr([](double v) { return elu(v); });
        u = std::move(h);
    }
    return u;
}

Mat DenseNet::input_jacobian(const Vec& x) const
{
    const Index n = input_dim();
    Mat dual(n, n + 1);
    dual.col(0) = x;
    dual.rightCols(n).setIdentity();
    const Mat out = forward_dual(dual, 1);
    return out.rightCols(n);
}

Mat DenseNet::forward_dual(const Mat& dual, Index batch, NetTape* tape) const
{
    if (dual.rows() != input_dim() || batch < 1 || dual.cols() % batch != 0)
        throw ConfigError("DenseNet::forward_dual: bad dual layout");
    if (tape) {
        tape->batch = batch;
        tape->inputs.clear();
        tape->preacts.clear();
        tape->act_prime.clear();
    }

    Mat u = dual;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        Mat z = layer.weight * u;
        z.leftCols(batch).colwise() += layer.bias;
        const bool hidden = l + 1 < layers_.size();
        if (tape)
            tape->inputs.push_back(std::move(u));
        if (!hidden) {
            u = std::move(z);
            break;
        }
        const Mat h = z.leftCols(batch);
        const Mat d1 = h.unaryExpr([](double v) { return elu_prime(v); });
        Mat a(z.rows(), z.cols());
        a.leftCols(batch) = h.unaryExpr([](double v) { return elu(v); });
        for (Index j = batch; j < z.cols(); j += batch)
            a.middleCols(j, batch) = z.middleCols(j, batch).cwiseProduct(d1);
        if (tape) {
            tape->preacts.push_back(std::move(z));
            tape->act_prime.push_back(d1);
        }
        u = std::move(a);
    }
    return u;
}

Mat DenseNet::backward_dual(const Mat& grad_out, const NetTape& tape, std::span<double> grad) const
{
    if (grad.size() != static_cast<std::size_t>(parameter_count()))
        throw ConfigError("DenseNet::backward_dual: gradient buffer size mismatch");
    const Index batch = tape.batch;
    Mat g = grad_out;

    // Offsets of each layer's block in the flat gradient.
    std::vector<std::size_t> offsets(layers_.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        offsets[l] = off;
        off += static_cast<std::size_t>(layers_[l].weight.size() + layers_[l].bias.size());
    }

    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& layer = layers_[li];
        const bool hidden = li + 1 < layers_.size();
        if (hidden) {
            // a = elu(h), da_j = elu'(h) dh_j
            const Mat& z = tape.preacts[li];
            const Mat& d1 = tape.act_prime[li];
            const Mat d2 = z.leftCols(batch).unaryExpr([](double v) { return elu_second(v); });
            Mat gz(g.rows(), g.cols());
            gz.leftCols(batch) = g.leftCols(batch).cwiseProduct(d1);
            for (Index j = batch; j < g.cols(); j += batch) {
                gz.leftCols(batch) += g.middleCols(j, batch).cwiseProduct(d2).cwiseProduct(z.middleCols(j, batch));
                gz.middleCols(j, batch) = g.middleCols(j, batch).cwiseProduct(d1);
            }
            g = std::move(gz);
        }
        const Mat& u = tape.inputs[li];
        Eigen::Map<RowMat> gW(grad.data() + offsets[li], layer.weight.rows(), layer.weight.cols());
        Eigen::Map<Vec> gb(grad.data() + offsets[li] + static_cast<std::size_t>(layer.weight.size()),
                           layer.bias.size());
        gW.noalias() += g * u.transpose();
        gb += g.leftCols(batch).rowwise().sum();
        g = layer.weight.transpose() * g;
    }
    return g;
}

Index DenseNet::parameter_count() const
{
    Index n = 0;
    for (const auto& l : layers_)
        n += l.weight.size() + l.bias.size();
    return n;
}

void DenseNet::write_parameters(std::span<double> out) const
{
    if (out.size() != static_cast<std::size_t>(parameter_count()))
        throw ConfigError("DenseNet::write_parameters: size mismatch");
    double* p = out.data();
    for (const auto& l : layers_) {
        Eigen::Map<RowMat>(p, l.weight.rows(), l.weight.cols()) = l.weight;
        p += l.weight.size();
        Eigen::Map<Vec>(p, l.bias.size()) = l.bias;
        p += l.bias.size();
    }
}

void DenseNet::read_parameters(std::span<const double> in)
{
    if (in.size() != static_cast<std::size_t>(parameter_count()))
        throw ConfigError("DenseNet::read_parameters: size mismatch");
    const double* p = in.data();
    for (auto& l : layers_) {
        l.weight = Eigen::Map<const RowMat>(p, l.weight.rows(), l.weight.cols());
        p += l.weight.size();
        l.bias = Eigen::Map<const Vec>(p, l.bias.size());
        p += l.bias.size();
    }
}

ParamIndex::ParamIndex(const std::vector<const DenseNet*>& nets)
{
    for (const DenseNet* n : nets) {
        dims_.push_back(n->layer_dims());
        offsets_.push_back(total_);
        total_ += static_cast<std::size_t>(n->parameter_count());
    }
}

std::pair<std::size_t, std::size_t> ParamIndex::net_range(std::size_t i) const
{
    const std::size_t end = i + 1 < offsets_.size() ? offsets_[i + 1] : total_;
    return {offsets_.at(i), end};
}

ParamSlot ParamIndex::locate(std::size_t flat) const
{
    if (flat >= total_)
        throw ConfigError("ParamIndex::locate: index out of range");
    std::size_t net = 0;
    while (net + 1 < offsets_.size() && offsets_[net + 1] <= flat)
        ++net;
    std::size_t rem = flat - offsets_[net];
    const auto& dims = dims_[net];
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto rows = static_cast<std::size_t>(dims[l + 1]);
        const auto cols = static_cast<std::size_t>(dims[l]);
        if (rem < rows * cols)
            return {net, l, false, static_cast<Index>(rem / cols), static_cast<Index>(rem % cols)};
        rem -= rows * cols;
        if (rem < rows)
            return {net, l, true, static_cast<Index>(rem), 0};
        rem -= rows;
    }
    throw ConfigError("ParamIndex::locate: inconsistent layout");
}

Vec flatten(const std::vector<const DenseNet*>& nets)
{
    Index total = 0;
    for (const DenseNet* n : nets)
        total += n->parameter_count();
    Vec out(total);
    Index off = 0;
    for (const DenseNet* n : nets) {
        n->write_parameters({out.data() + off, static_cast<std::size_t>(n->parameter_count())});
        off += n->parameter_count();
    }
    return out;
}

void unflatten(const Vec& params, const std::vector<DenseNet*>& nets)
{
    Index total = 0;
    for (const DenseNet* n : nets)
        total += n->parameter_count();
    if (params.size() != total)
        throw ConfigError("unflatten: parameter vector size mismatch");
    Index off = 0;
    for (DenseNet* n : nets) {
        n->read_parameters({params.data() + off, static_cast<std::size_t>(n->parameter_count())});
        off += n->parameter_count();
    }
}

void adam_step(Vec& params, const Vec& grads, AdamState& state, const AdamConfig& cfg)
{
    if (grads.size() != params.size())
        throw ConfigError("adam_step: gradient size mismatch");
    if (state.m.size() == 0) {
        state.m = Vec::Zero(params.size());
        state.v = Vec::Zero(params.size());
        state.step = 0;
    }
    ++state.step;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

} // namespace koopflow
