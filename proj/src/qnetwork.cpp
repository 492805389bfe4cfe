#include "crossflow/qnetwork.hpp"

#include <cmath>
#include <stdexcept>

namespace crossflow {

namespace {

QNetwork::Layer make_layer(int in, int out) {
    QNetwork::Layer l;
    l.in = in;
    l.out = out;
    l.w.assign(static_cast<std::size_t>(in) * out, 0.0);
    l.b.assign(out, 0.0);
    return l;
}

void init_layer(QNetwork::Layer& l, Rng& rng) {
    const double scale = std::sqrt(2.0 / std::max(1, l.in));
    for (double& w : l.w) w = rng.gaussian(0.0, scale);
    // biases start at zero
}

void affine(const QNetwork::Layer& l, std::span<const double> x, std::vector<double>& z) {
    z.assign(l.out, 0.0);
    for (int o = 0; o < l.out; ++o) {
        const double* row = &l.w[static_cast<std::size_t>(o) * l.in];
        double acc = l.b[o];
        for (int i = 0; i < l.in; ++i) acc += row[i] * x[i];
        z[o] = acc;
    }
}

}  // namespace

QNetwork QNetwork::zeros(int input_dim, std::vector<int> hidden, bool dueling) {
    if (input_dim <= 0) throw std::invalid_argument("QNetwork: input_dim must be > 0");
    QNetwork n;
    n.input_dim = input_dim;
    n.hidden = std::move(hidden);
    n.dueling = dueling;
    int prev = input_dim;
    for (int h : n.hidden) {
        if (h <= 0) throw std::invalid_argument("QNetwork: hidden sizes must be > 0");
        n.hidden_layers.push_back(make_layer(prev, h));
        prev = h;
    }
    if (dueling) {
        n.value = make_layer(prev, 1);
        n.adv = make_layer(prev, kNumActions);
    } else {
        n.out = make_layer(prev, kNumActions);
    }
    return n;
}

QNetwork QNetwork::init(int input_dim, std::vector<int> hidden, bool dueling, Rng& rng) {
    QNetwork n = zeros(input_dim, std::move(hidden), dueling);
    for (auto& l : n.hidden_layers) init_layer(l, rng);
    if (dueling) {
        init_layer(n.value, rng);
        init_layer(n.adv, rng);
    } else {
        init_layer(n.out, rng);
    }
    return n;
}

std::array<double, 2> QNetwork::forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != input_dim)
        throw std::invalid_argument("QNetwork::forward: input dimension mismatch (got " +
                                    std::to_string(x.size()) + ", expected " +
                                    std::to_string(input_dim) + ")");
    std::vector<double> h(x.begin(), x.end());
    std::vector<double> z;
    for (const auto& l : hidden_layers) {
        affine(l, h, z);
        for (double& v : z) v = v > 0 ? v : 0.0;
        h = z;
    }
    if (!dueling) {
        affine(out, h, z);
        return {z[0], z[1]};
    }
    std::vector<double> v, a;
    affine(value, h, v);
    affine(adv, h, a);
    const double mean_a = (a[0] + a[1]) / 2.0;
    return {v[0] + a[0] - mean_a, v[0] + a[1] - mean_a};
}

std::size_t QNetwork::param_count() const {
    std::size_t n = 0;
    auto add = [&](const Layer& l) { n += l.w.size() + l.b.size(); };
    for (const auto& l : hidden_layers) add(l);
    if (dueling) {
        add(value);
        add(adv);
    } else {
        add(out);
    }
    return n;
}

bool QNetwork::finite() const {
    bool ok = true;
    const_cast<QNetwork*>(this)->for_each_param([&](double& x) {
        if (!std::isfinite(x)) ok = false;
    });
    return ok;
}

void QNetwork::fill(double v) {
    for_each_param([&](double& x) { x = v; });
}

double batch_gradients(const QNetwork& net, std::span<const BatchSample> batch, QNetwork& grad) {
    if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
    grad.fill(0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;

    const std::size_t depth = net.hidden_layers.size();
    std::vector<std::vector<double>> acts(depth + 1);  // acts[0] = input copy
    std::vector<std::vector<double>> zs(depth);

    for (const auto& s : batch) {
        // forward with caches
        acts[0].assign(s.obs.begin(), s.obs.end());
        for (std::size_t l = 0; l < depth; ++l) {
            affine(net.hidden_layers[l], acts[l], zs[l]);
            acts[l + 1] = zs[l];
            for (double& v : acts[l + 1]) v = v > 0 ? v : 0.0;
        }
        const auto& top = acts[depth];

        double q;
        std::vector<double> vout, aout;
        if (net.dueling) {
            affine(net.value, top, vout);
            affine(net.adv, top, aout);
            q = vout[0] + aout[s.action] - (aout[0] + aout[1]) / 2.0;
        } else {
            affine(net.out, top, vout);
            q = vout[s.action];
        }

        const double err = q - s.target;
        loss += err * err * inv_b;
        const double g = 2.0 * err * inv_b;  // dL/dq for this sample

        // backward into the top hidden activation
        std::vector<double> dtop(top.size(), 0.0);
        if (net.dueling) {
            // dq/dV = 1; dq/dA_j = [j==a] - 1/2
            grad.value.b[0] += g;
            for (int i = 0; i < net.value.in; ++i)
                grad.value.w[i] += g * top[i];
            for (int j = 0; j < kNumActions; ++j) {
                const double ga = g * ((j == s.action ? 1.0 : 0.0) - 0.5);
                grad.adv.b[j] += ga;
                double* wrow = &grad.adv.w[static_cast<std::size_t>(j) * net.adv.in];
                const double* arow = &net.adv.w[static_cast<std::size_t>(j) * net.adv.in];
                for (int i = 0; i < net.adv.in; ++i) {
                    wrow[i] += ga * top[i];
                    dtop[i] += ga * arow[i];
                }
            }
            for (int i = 0; i < net.value.in; ++i) dtop[i] += g * net.value.w[i];
        } else {
            grad.out.b[s.action] += g;
            double* wrow = &grad.out.w[static_cast<std::size_t>(s.action) * net.out.in];
            const double* nrow = &net.out.w[static_cast<std::size_t>(s.action) * net.out.in];
            for (int i = 0; i < net.out.in; ++i) {
                wrow[i] += g * top[i];
                dtop[i] += g * nrow[i];
            }
        }

        // hidden layers, top down
        std::vector<double> dh = std::move(dtop);
        for (std::size_t l = depth; l-- > 0;) {
            const auto& layer = net.hidden_layers[l];
            auto& glayer = grad.hidden_layers[l];
            std::vector<double> dprev(layer.in, 0.0);
            for (int o = 0; o < layer.out; ++o) {
                const double dz = zs[l][o] > 0 ? dh[o] : 0.0;
                if (dz == 0.0) continue;
                glayer.b[o] += dz;
                double* gw = &glayer.w[static_cast<std::size_t>(o) * layer.in];
                const double* w = &layer.w[static_cast<std::size_t>(o) * layer.in];
                const auto& prev = acts[l];
                for (int i = 0; i < layer.in; ++i) {
                    gw[i] += dz * prev[i];
                    dprev[i] += dz * w[i];
                }
            }
            dh = std::move(dprev);
        }
    }
    return loss;
}

void AdamOptimizer::step(QNetwork& net, QNetwork& grad) {
    const std::size_t n = net.param_count();
    if (m_.size() != n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t i = 0;
    net.zip_params(grad, [&](double& p, double& g) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        p -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        ++i;
    });
}

}  // namespace crossflow
