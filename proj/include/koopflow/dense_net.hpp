#pragma once

#include "koopflow/core.hpp"

#include <span>
#include <vector>

namespace koopflow {

// ELU with alpha = 1. C1 everywhere; second derivative jumps at 0.
inline double elu(double h) { return h > 0.0 ? h : std::expm1(h); }
inline double elu_prime(double h) { return h > 0.0 ? 1.0 : std::exp(h); }
inline double elu_second(double h) { return h > 0.0 ? 0.0 : std::exp(h); }

struct DenseLayer {
    Mat weight; // out x in
    Vec bias;   // out
};

/// Per-call cache for backpropagating through forward_dual.
struct NetTape {
    Index batch = 0;
    std::vector<Mat> inputs;       // input of each affine layer, dual layout
    std::vector<Mat> preacts;      // pre-activation of each hidden layer, dual layout
    std::vector<Mat> act_prime;    // elu'(value block) per hidden layer
};

/// Feed-forward net: affine layers with ELU between them, identity output.
///
/// Batched evaluation works on a "dual" matrix: (k + 1) column blocks of
/// width B, the first holding B input points and block j holding the
/// tangent direction j for each of those points. Propagating tangents gives
/// directional derivatives (forward mode); backward_dual then differentiates
/// the whole forward-mode pass with respect to the parameters, which is what
/// losses reading input-Jacobian entries need.
class DenseNet {
public:
    DenseNet() = default;
    /// All weights and biases zero.
    explicit DenseNet(std::vector<Index> layer_dims);

    /// He-scaled normal weights on every layer except the output, which is zero when zero_output is set.
    static DenseNet he_initialized(std::vector<Index> layer_dims, Rng& rng, bool zero_output);

    Index input_dim() const { return dims_.front(); }
    Index output_dim() const { return dims_.back(); }
    const std::vector<Index>& layer_dims() const { return dims_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    Vec forward(const Vec& x) const;
    Mat input_jacobian(const Vec& x) const;

    Mat forward_dual(const Mat& dual, Index batch, NetTape* tape = nullptr) const;

    /// Accumulates d(loss)/d(params) into grad (layout of write_parameters) and
    /// returns d(loss)/d(dual input).
    Mat backward_dual(const Mat& grad_out, const NetTape& tape, std::span<double> grad) const;

    Index parameter_count() const;
    /// Layout per layer: weight row-major, then bias.
    void write_parameters(std::span<double> out) const;
    void read_parameters(std::span<const double> in);

private:
    std::vector<Index> dims_;
    std::vector<DenseLayer> layers_;
};

/// Location of one entry of a flat parameter vector.
struct ParamSlot {
    std::size_t net = 0;
    std::size_t layer = 0;
    bool is_bias = false;
    Index row = 0;
    Index col = 0;
};

/// Maps flat indices of a concatenation of nets back to (net, layer, slot).
class ParamIndex {
public:
    explicit ParamIndex(const std::vector<const DenseNet*>& nets);

    std::size_t size() const { return total_; }
    ParamSlot locate(std::size_t flat) const;
    /// Flat range [begin, end) owned by net i.
    std::pair<std::size_t, std::size_t> net_range(std::size_t i) const;

private:
    std::vector<std::vector<Index>> dims_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
};

Vec flatten(const std::vector<const DenseNet*>& nets);
void unflatten(const Vec& params, const std::vector<DenseNet*>& nets);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vec m;
    Vec v;
    long step = 0;
};

/// One bias-corrected Adam update of params in place. Zero-sized state is initialized on first call.
void adam_step(Vec& params, const Vec& grads, AdamState& state, const AdamConfig& cfg);

} // namespace koopflow
