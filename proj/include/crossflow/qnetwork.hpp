#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "crossflow/rng.hpp"

namespace crossflow {

inline constexpr int kNumActions = 2;  // Stop, Go

/// Fully-connected rectifier network mapping an observation to two action
/// values.  With dueling heads, q(a) = V + A(a) - mean(A).  Also doubles as
/// the gradient container (same parameter shapes).
struct QNetwork {
    struct Layer {
        int in = 0, out = 0;
        std::vector<double> w;  // row-major [out][in]
        std::vector<double> b;
    };

    int input_dim = 0;
    std::vector<int> hidden;
    bool dueling = true;
    std::vector<Layer> hidden_layers;
    Layer out;    // 2 outputs, used when !dueling
    Layer value;  // 1 output, dueling
    Layer adv;    // 2 outputs, dueling

    static QNetwork zeros(int input_dim, std::vector<int> hidden, bool dueling);
    /// He-style initialization from the given stream.
    static QNetwork init(int input_dim, std::vector<int> hidden, bool dueling, Rng& rng);

    std::array<double, 2> forward(std::span<const double> x) const;

    std::size_t param_count() const;
    bool finite() const;
    void fill(double v);

    /// Applies fn to every parameter, pairing it with the same-position
    /// parameter of `other` (used by the optimizer and tests).
    template <typename Fn>
    void zip_params(QNetwork& other, Fn&& fn) {
        auto layer = [&](Layer& a, Layer& b) {
            for (std::size_t i = 0; i < a.w.size(); ++i) fn(a.w[i], b.w[i]);
            for (std::size_t i = 0; i < a.b.size(); ++i) fn(a.b[i], b.b[i]);
        };
        for (std::size_t l = 0; l < hidden_layers.size(); ++l)
            layer(hidden_layers[l], other.hidden_layers[l]);
        if (dueling) {
            layer(value, other.value);
            layer(adv, other.adv);
        } else {
            layer(out, other.out);
        }
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        auto layer = [&](Layer& a) {
            for (double& x : a.w) fn(x);
            for (double& x : a.b) fn(x);
        };
        for (auto& l : hidden_layers) layer(l);
        if (dueling) {
            layer(value);
            layer(adv);
        } else {
            layer(out);
        }
    }
};

/// One batch element for a gradient step.
struct BatchSample {
    std::span<const double> obs;
    int action = 0;
    double target = 0.0;
};

/// Gradients of the mean squared TD error over the batch, written into
/// `grad` (zeroed first).  Returns the batch loss.
double batch_gradients(const QNetwork& net, std::span<const BatchSample> batch, QNetwork& grad);

/// Adaptive-moment gradient descent.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(QNetwork& net, QNetwork& grad);

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace crossflow
