#include "koopflow/coupling_flow.hpp"

#include <algorithm>
#include <cmath>

namespace koopflow {

CouplingLayer::CouplingLayer(std::vector<bool> pass_mask, DenseNet s_net, DenseNet t_net, double s_clamp)
    : mask_(std::move(pass_mask)), s_net_(std::move(s_net)), t_net_(std::move(t_net)), s_clamp_(s_clamp)
{
    for (std::size_t i = 0; i < mask_.size(); ++i)
        (mask_[i] ? pass_ : trans_).push_back(static_cast<Index>(i));
    if (pass_.empty() || trans_.empty())
        throw ConfigError("coupling mask needs a non-empty pass-through block and a non-empty transformed block");
    const auto na = static_cast<Index>(pass_.size());
    const auto nb = static_cast<Index>(trans_.size());
    if (s_net_.input_dim() != na || t_net_.input_dim() != na || s_net_.output_dim() != nb || t_net_.output_dim() != nb)
        throw ConfigError("coupling s/t net dimensions do not match the mask");
    if (!(s_clamp_ > 0.0))
        throw ConfigError("coupling s clamp must be positive");
}

Mat CouplingLayer::gather(const Mat& m, const std::vector<Index>& rows) const
{
    Mat out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

Mat CouplingLayer::forward_dual(const Mat& dual, Index batch, CouplingTape* tape) const
{
    if (dual.rows() != dim())
        throw ConfigError("CouplingLayer: input dimension mismatch");
    const Mat xa = gather(dual, pass_);
    const Mat xb = gather(dual, trans_);

    NetTape* st = tape ? &tape->s_tape : nullptr;
    NetTape* tt = tape ? &tape->t_tape : nullptr;
    const Mat s_raw = s_net_.forward_dual(xa, batch, st);
    const Mat t = t_net_.forward_dual(xa, batch, tt);

    const Mat th = (s_raw.leftCols(batch) / s_clamp_).array().tanh().matrix();
    const Mat s = s_clamp_ * th;
    const Mat sech2 = (1.0 - th.array().square()).matrix();
    const Mat e = s.array().exp().matrix();

    Mat yb(xb.rows(), xb.cols());
    yb.leftCols(batch) = xb.leftCols(batch).cwiseProduct(e) + t.leftCols(batch);
    for (Index j = batch; j < xb.cols(); j += batch) {
        const Mat ds = sech2.cwiseProduct(s_raw.middleCols(j, batch));
        yb.middleCols(j, batch) = xb.middleCols(j, batch).cwiseProduct(e) +
                                  xb.leftCols(batch).cwiseProduct(e).cwiseProduct(ds) + t.middleCols(j, batch);
    }
    if (!yb.allFinite())
        throw NumericalError("coupling layer produced a non-finite output (exp overflow)");

    Mat y = dual;
    for (std::size_t i = 0; i < trans_.size(); ++i)
        y.row(trans_[i]) = yb.row(static_cast<Index>(i));

    if (tape) {
        tape->input = dual;
        tape->s_raw = s_raw;
        tape->s_tanh = th;
        tape->scale = e;
    }
    return y;
}

Mat CouplingLayer::backward_dual(const Mat& grad_out, const CouplingTape& tape, std::span<double> grad) const
{
    const Index batch = tape.s_tape.batch;
    const Mat xb = gather(tape.input, trans_);
    const Mat gy_b = gather(grad_out, trans_);
    const Mat& e = tape.scale;
    const Mat& th = tape.s_tanh;
    const Mat sech2 = (1.0 - th.array().square()).matrix();

    const Index cols = grad_out.cols();
    const Index nb = static_cast<Index>(trans_.size());
    Mat g_xb(nb, cols);
    Mat g_sraw(nb, cols);
    // y_b = x_b e + t;  dy_b = dx_b e + x_b e ds + dt;  e = exp(s);  s = c tanh(r / c);  ds = sech2 dr
    Mat g_e = gy_b.leftCols(batch).cwiseProduct(xb.leftCols(batch));
    g_xb.leftCols(batch) = gy_b.leftCols(batch).cwiseProduct(e);
    Mat g_sraw_value = Mat::Zero(nb, batch);
    for (Index j = batch; j < cols; j += batch) {
        const Mat gdy = gy_b.middleCols(j, batch);
        const Mat dr = tape.s_raw.middleCols(j, batch);
        const Mat ds = sech2.cwiseProduct(dr);
        const Mat dxb = xb.middleCols(j, batch);
        g_xb.middleCols(j, batch) = gdy.cwiseProduct(e);
        g_e += gdy.cwiseProduct(dxb + xb.leftCols(batch).cwiseProduct(ds));
        g_xb.leftCols(batch) += gdy.cwiseProduct(e).cwiseProduct(ds);
        const Mat g_ds = gdy.cwiseProduct(xb.leftCols(batch)).cwiseProduct(e);
        g_sraw.middleCols(j, batch) = g_ds.cwiseProduct(sech2);
        // d(sech2)/dr = -2 tanh sech2 / c
        g_sraw_value -= (2.0 / s_clamp_) * g_ds.cwiseProduct(dr).cwiseProduct(th).cwiseProduct(sech2);
    }
    const Mat g_s = g_e.cwiseProduct(e);
    g_sraw.leftCols(batch) = g_s.cwiseProduct(sech2) + g_sraw_value;

    const Mat g_t = gy_b;
    const auto ns = static_cast<std::size_t>(s_net_.parameter_count());
    const Mat g_xa = s_net_.backward_dual(g_sraw, tape.s_tape, grad.subspan(0, ns)) +
                     t_net_.backward_dual(g_t, tape.t_tape, grad.subspan(ns));

    Mat g_in(grad_out.rows(), cols);
    for (std::size_t i = 0; i < pass_.size(); ++i)
        g_in.row(pass_[i]) = grad_out.row(pass_[i]) + g_xa.row(static_cast<Index>(i));
    for (std::size_t i = 0; i < trans_.size(); ++i)
        g_in.row(trans_[i]) = g_xb.row(static_cast<Index>(i));
    return g_in;
}

Vec CouplingLayer::forward(const Vec& x) const
{
    return forward_dual(x, 1);
}

Vec CouplingLayer::inverse(const Vec& y) const
{
    if (y.size() != dim())
        throw ConfigError("CouplingLayer::inverse: dimension mismatch");
    Vec ya(static_cast<Index>(pass_.size()));
    for (std::size_t i = 0; i < pass_.size(); ++i)
        ya(static_cast<Index>(i)) = y(pass_[i]);
    const Vec s = s_clamp_ * (s_net_.forward(ya) / s_clamp_).array().tanh().matrix();
    const Vec t = t_net_.forward(ya);
    Vec x = y;
    for (std::size_t i = 0; i < trans_.size(); ++i) {
        const auto k = static_cast<Index>(i);
        x(trans_[i]) = (y(trans_[i]) - t(k)) * std::exp(-s(k));
    }
    if (!x.allFinite())
        throw NumericalError("coupling layer inverse produced a non-finite output");
    return x;
}

Mat CouplingLayer::jacobian(const Vec& x) const
{
    const Index d = dim();
    Mat dual(d, d + 1);
    dual.col(0) = x;
    dual.rightCols(d).setIdentity();
    return forward_dual(dual, 1).rightCols(d);
}

std::vector<bool> alternating_mask(Index dim, int layer)
{
    if (dim < 2)
        throw ConfigError("coupling flows need dimension >= 2");
    std::vector<bool> mask(static_cast<std::size_t>(dim), false);
    if (dim == 2) {
        mask[static_cast<std::size_t>(layer % 2)] = true;
        return mask;
    }
    const Index half = dim / 2;
    for (Index i = 0; i < dim; ++i)
        mask[static_cast<std::size_t>(i)] = (layer % 2 == 0) ? (i < half) : (i >= half);
    return mask;
}

FlowModel::FlowModel(std::vector<CouplingLayer> layers) : layers_(std::move(layers))
{
    for (const auto& l : layers_)
        if (l.dim() != layers_.front().dim())
            throw ConfigError("FlowModel: layers disagree on dimension");
}

FlowModel FlowModel::identity_initialized(const FlowArchitecture& arch, std::uint64_t seed)
{
    if (arch.layers < 1)
        throw ConfigError("flow needs at least one coupling layer");
    Rng rng(seed);
    std::vector<CouplingLayer> layers;
    for (int i = 0; i < arch.layers; ++i) {
        auto mask = alternating_mask(arch.dim, i);
        const auto na = static_cast<Index>(std::count(mask.begin(), mask.end(), true));
        std::vector<Index> dims{na};
        dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
        dims.push_back(arch.dim - na);
        DenseNet s = DenseNet::he_initialized(dims, rng, true);
        DenseNet t = DenseNet::he_initialized(dims, rng, true);
        layers.emplace_back(std::move(mask), std::move(s), std::move(t), arch.s_clamp);
    }
    return FlowModel(std::move(layers));
}

Index FlowModel::dim() const
{
    return layers_.empty() ? 0 : layers_.front().dim();
}

Vec FlowModel::forward(const Vec& x) const
{
    return forward_dual(x, 1);
}

Vec FlowModel::inverse(const Vec& y) const
{
    Vec x = y;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        try {
            x = layers_[i].inverse(x);
        } catch (const NumericalError& e) {
            throw NumericalError("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return x;
}

Mat FlowModel::jacobian(const Vec& x) const
{
    const Index d = dim();
    Mat dual(d, d + 1);
    dual.col(0) = x;
    dual.rightCols(d).setIdentity();
    return forward_dual(dual, 1).rightCols(d);
}

Mat FlowModel::forward_dual(const Mat& dual, Index batch, FlowTape* tape) const
{
    if (tape)
        tape->layers.resize(layers_.size());
    Mat u = dual;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            u = layers_[i].forward_dual(u, batch, tape ? &tape->layers[i] : nullptr);
        } catch (const NumericalError& e) {
            throw NumericalError("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return u;
}

Mat FlowModel::backward_dual(const Mat& grad_out, const FlowTape& tape, std::span<double> grad) const
{
    if (grad.size() != static_cast<std::size_t>(parameter_count()))
        throw ConfigError("FlowModel::backward_dual: gradient buffer size mismatch");
    std::vector<std::size_t> offsets(layers_.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        offsets[i] = off;
        off += static_cast<std::size_t>(layers_[i].parameter_count());
    }
    Mat g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;)
        g = layers_[i].backward_dual(
            g, tape.layers[i], grad.subspan(offsets[i], static_cast<std::size_t>(layers_[i].parameter_count())));
    return g;
}

std::vector<const DenseNet*> FlowModel::nets() const
{
    std::vector<const DenseNet*> out;
    for (const auto& l : layers_) {
        out.push_back(&l.s_net());
        out.push_back(&l.t_net());
    }
    return out;
}

Vec FlowModel::parameters() const
{
    return flatten(nets());
}

void FlowModel::set_parameters(const Vec& params)
{
    std::vector<DenseNet*> ptrs;
    for (auto& l : layers_) {
        ptrs.push_back(&l.s_net());
        ptrs.push_back(&l.t_net());
    }
    unflatten(params, ptrs);
}

Index FlowModel::parameter_count() const
{
    Index n = 0;
    for (const auto& l : layers_)
        n += l.parameter_count();
    return n;
}

} // namespace koopflow
