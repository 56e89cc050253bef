#pragma once

#include "koopflow/dense_net.hpp"

#include <vector>

namespace koopflow {

struct CouplingTape {
    NetTape s_tape;
    NetTape t_tape;
    Mat input;   // layer input, dual layout
    Mat s_raw;   // s-net output, dual layout
    Mat s_tanh;  // tanh(s_raw / clamp) on the value block
    Mat scale;   // exp(s) on the value block
};

/// Affine coupling layer: pass-through block copied, complement block
/// scaled by exp(s(x_a)) and shifted by t(x_a). The s output is soft-clamped
/// to (-clamp, clamp) through clamp * tanh(raw / clamp).
class CouplingLayer {
public:
    CouplingLayer(std::vector<bool> pass_mask, DenseNet s_net, DenseNet t_net, double s_clamp = 5.0);

    Index dim() const { return static_cast<Index>(mask_.size()); }
    const std::vector<bool>& mask() const { return mask_; }
    const std::vector<Index>& pass_indices() const { return pass_; }
    const std::vector<Index>& transform_indices() const { return trans_; }
    const DenseNet& s_net() const { return s_net_; }
    const DenseNet& t_net() const { return t_net_; }
    DenseNet& s_net() { return s_net_; }
    DenseNet& t_net() { return t_net_; }
    double s_clamp() const { return s_clamp_; }

    Vec forward(const Vec& x) const;
    Vec inverse(const Vec& y) const;
    Mat jacobian(const Vec& x) const;

    Mat forward_dual(const Mat& dual, Index batch, CouplingTape* tape = nullptr) const;
    /// grad holds the s-net parameters followed by the t-net parameters.
    Mat backward_dual(const Mat& grad_out, const CouplingTape& tape, std::span<double> grad) const;

    Index parameter_count() const { return s_net_.parameter_count() + t_net_.parameter_count(); }

private:
    Mat gather(const Mat& m, const std::vector<Index>& rows) const;

    std::vector<bool> mask_;
    std::vector<Index> pass_;
    std::vector<Index> trans_;
    DenseNet s_net_;
    DenseNet t_net_;
    double s_clamp_;
};

struct FlowArchitecture {
    Index dim = 2;
    int layers = 7;
    std::vector<Index> hidden{120, 120, 120};
    double s_clamp = 5.0;
};

/// Pass-through mask of layer i: for d = 2 coordinate (i mod 2); otherwise
/// alternating complementary half-splits.
std::vector<bool> alternating_mask(Index dim, int layer);

struct FlowTape {
    std::vector<CouplingTape> layers;
};

/// Composition of coupling layers, d(x) = d_k o ... o d_1 (x).
class FlowModel {
public:
    FlowModel() = default;
    explicit FlowModel(std::vector<CouplingLayer> layers);

    /// Hidden layers He-initialized, output layers zero: the identity map.
    static FlowModel identity_initialized(const FlowArchitecture& arch, std::uint64_t seed);

    Index dim() const;
    const std::vector<CouplingLayer>& layers() const { return layers_; }
    std::vector<CouplingLayer>& layers() { return layers_; }

    Vec forward(const Vec& x) const;
    Vec inverse(const Vec& y) const;
    Mat jacobian(const Vec& x) const;

    Mat forward_dual(const Mat& dual, Index batch, FlowTape* tape = nullptr) const;
    Mat backward_dual(const Mat& grad_out, const FlowTape& tape, std::span<double> grad) const;

    /// Concatenated [s_1, t_1, ..., s_k, t_k] parameters.
    Vec parameters() const;
    void set_parameters(const Vec& params);
    Index parameter_count() const;
    std::vector<const DenseNet*> nets() const;

private:
    std::vector<CouplingLayer> layers_;
};

} // namespace koopflow
