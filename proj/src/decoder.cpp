#include "hug/decoder.hpp"

#include "hug/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace hug {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void init_layer(DenseLayer& layer, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (auto& w : layer.weight) w = (2.0 * uniform01(rng) - 1.0) * bound;
    for (auto& b : layer.bias) b = (2.0 * uniform01(rng) - 1.0) * bound;
}

MlpHead make_head(int in, int hidden, int out) { return MlpHead{DenseLayer(in, hidden), DenseLayer(hidden, out)}; }

void dense_forward(const DenseLayer& l, std::span<const double> x, std::vector<double>& y) {
    y.assign(l.bias.begin(), l.bias.end());
    for (int o = 0; o < l.out; ++o) {
        const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in;
        double acc = 0.0;
        for (int i = 0; i < l.in; ++i) acc += row[i] * x[i];
        y[o] += acc;
    }
}

struct HeadActivations {
    std::vector<double> pre;     // hidden pre-activation
    std::vector<double> hidden;  // relu(pre)
    std::vector<double> out;
};

void head_forward(const MlpHead& h, std::span<const double> x, HeadActivations& act) {
    dense_forward(h.hidden, x, act.pre);
    act.hidden.resize(act.pre.size());
    std::transform(act.pre.begin(), act.pre.end(), act.hidden.begin(), [](double v) { return v > 0 ? v : 0.0; });
    dense_forward(h.output, act.hidden, act.out);
}

// Accumulates parameter gradients into `g` and input gradients into `dx`.
void head_backward(const MlpHead& h, std::span<const double> x, const HeadActivations& act,
                   std::span<const double> dout, MlpHead& g, std::span<double> dx) {
    const int hid = h.hidden.out;
    std::vector<double> dhidden(hid, 0.0);
    for (int o = 0; o < h.output.out; ++o) {
        const double d = dout[o];
        if (d == 0.0) continue;
        g.output.bias[o] += d;
        const double* row = h.output.weight.data() + static_cast<std::size_t>(o) * hid;
        double* grow = g.output.weight.data() + static_cast<std::size_t>(o) * hid;
        for (int k = 0; k < hid; ++k) {
            grow[k] += d * act.hidden[k];
            dhidden[k] += d * row[k];
        }
    }
    const int in = h.hidden.in;
    for (int k = 0; k < hid; ++k) {
        if (!(act.pre[k] > 0)) continue;
        const double d = dhidden[k];
        if (d == 0.0) continue;
        g.hidden.bias[k] += d;
        const double* row = h.hidden.weight.data() + static_cast<std::size_t>(k) * in;
        double* grow = g.hidden.weight.data() + static_cast<std::size_t>(k) * in;
        for (int i = 0; i < in; ++i) {
            grow[i] += d * x[i];
            dx[i] += d * row[i];
        }
    }
}

void check_shapes(const Anchor& anchor, const DecoderWeights& w) {
    if (anchor.feature.size() != w.feature_dim)
        throw ContractError("decode: anchor feature size does not match the decoder");
    if (static_cast<int>(anchor.offsets.size()) != w.k_off)
        throw ContractError("decode: anchor offset count does not match the decoder");
}

std::vector<double> decoder_input(const Anchor& anchor, const Vec3& camera_center, const DecoderWeights& w) {
    std::vector<double> x(w.input_dim());
    for (int f = 0; f < w.feature_dim; ++f) x[f] = anchor.feature[f];
    const Vec3 view = anchor.position - camera_center;
    const double dist = view.norm();
    const Vec3 dir = dist > 0 ? Vec3(view / dist) : Vec3(Vec3::Zero());
    for (int c = 0; c < 3; ++c) x[w.feature_dim + c] = dir[c];
    x[w.feature_dim + 3] = dist / w.distance_scale;
    return x;
}

// Identity bias keeps the raw quaternion away from zero at initialization.
Vec4 raw_quaternion(const std::vector<double>& cov_out, int k) {
    const double* q = cov_out.data() + 7 * k + 3;
    return Vec4(q[0] + 1.0, q[1], q[2], q[3]);
}

template <typename Fn>
void visit_head(MlpHead& h, Fn&& fn) {
    fn(std::span<double>(h.hidden.weight));
    fn(std::span<double>(h.hidden.bias));
    fn(std::span<double>(h.output.weight));
    fn(std::span<double>(h.output.bias));
}

void write_layer(std::ostream& out, const DenseLayer& l) {
    for (double v : l.weight) binary::put<double>(out, v);
    for (double v : l.bias) binary::put<double>(out, v);
}

void read_layer(std::istream& in, DenseLayer& l) {
    for (double& v : l.weight) v = binary::get<double>(in);
    for (double& v : l.bias) v = binary::get<double>(in);
}

}  // namespace

DecoderWeights DecoderWeights::zeros_like() const {
    DecoderWeights z = *this;
    z.for_each_param([](std::span<double> p) { std::fill(p.begin(), p.end(), 0.0); });
    return z;
}

void DecoderWeights::for_each_param(const std::function<void(std::span<double>)>& fn) {
    visit_head(opacity, fn);
    visit_head(color, fn);
    visit_head(covariance, fn);
}

void DecoderWeights::for_each_param(const std::function<void(std::span<const double>)>& fn) const {
    auto& self = const_cast<DecoderWeights&>(*this);
    self.for_each_param([&](std::span<double> p) { fn(std::span<const double>(p.data(), p.size())); });
}

DecoderWeights& DecoderWeights::operator+=(const DecoderWeights& o) {
    std::vector<std::span<const double>> src;
    o.for_each_param([&](std::span<const double> p) { src.push_back(p); });
    std::size_t n = 0;
    for_each_param([&](std::span<double> p) {
        if (n >= src.size() || src[n].size() != p.size()) throw ContractError("decoder shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += src[n][i];
        ++n;
    });
    return *this;
}

DecoderWeights init_weights(std::uint64_t seed, int feature_dim, int hidden_dim, int k_off, BlockId block,
                            double distance_scale) {
    if (feature_dim < 1 || hidden_dim < 1 || k_off < 1) throw ContractError("init_weights: dimensions must be positive");
    DecoderWeights w;
    w.block = block;
    w.feature_dim = feature_dim;
    w.hidden_dim = hidden_dim;
    w.k_off = k_off;
    w.distance_scale = distance_scale;
    const int in = w.input_dim();
    w.opacity = make_head(in, hidden_dim, k_off);
    w.color = make_head(in, hidden_dim, 3 * k_off);
    w.covariance = make_head(in, hidden_dim, 7 * k_off);
    std::mt19937_64 rng(seed);
    for (MlpHead* h : {&w.opacity, &w.color, &w.covariance}) {
        init_layer(h->hidden, rng);
        init_layer(h->output, rng);
    }
    return w;
}

std::vector<Gaussian3D> decode(const Anchor& anchor, const Vec3& camera_center, const DecoderWeights& weights) {
    check_shapes(anchor, weights);
    const auto x = decoder_input(anchor, camera_center, weights);
    HeadActivations op, col, cov;
    head_forward(weights.opacity, x, op);
    head_forward(weights.color, x, col);
    head_forward(weights.covariance, x, cov);

    std::vector<Gaussian3D> out(weights.k_off);
    for (int k = 0; k < weights.k_off; ++k) {
        auto& g = out[k];
        g.mean = anchor.position + anchor.offsets[k].cwiseProduct(anchor.scaling);
        g.opacity = sigmoid(op.out[k]);
        for (int c = 0; c < 3; ++c) {
            g.color[c] = sigmoid(col.out[3 * k + c]);
            const double log_scale = cov.out[7 * k + c] + std::log(anchor.scaling[c]);
            g.scale[c] = std::exp(std::clamp(log_scale, kMinLogScale, kMaxLogScale));
        }
        const Vec4 q = raw_quaternion(cov.out, k);
        g.rotation = q / q.norm();
    }
    return out;
}

AnchorGrad decoder_backward(const Anchor& anchor, const Vec3& camera_center, const DecoderWeights& weights,
                            std::span<const Gaussian3DGrad> upstream, DecoderWeights& weight_grads) {
    check_shapes(anchor, weights);
    if (static_cast<int>(upstream.size()) != weights.k_off)
        throw ContractError("decoder_backward: one upstream gradient per decoded Gaussian is required");
    const auto x = decoder_input(anchor, camera_center, weights);
    HeadActivations op, col, cov;
    head_forward(weights.opacity, x, op);
    head_forward(weights.color, x, col);
    head_forward(weights.covariance, x, cov);

    AnchorGrad g;
    g.feature = VecX::Zero(weights.feature_dim);
    g.offsets.assign(weights.k_off, Vec3::Zero());
    std::vector<double> d_op(op.out.size(), 0.0), d_col(col.out.size(), 0.0), d_cov(cov.out.size(), 0.0);
    for (int k = 0; k < weights.k_off; ++k) {
        const auto& up = upstream[k];
        g.offsets[k] = up.mean.cwiseProduct(anchor.scaling);
        g.scaling += up.mean.cwiseProduct(anchor.offsets[k]);
        const double o = sigmoid(op.out[k]);
        d_op[k] = up.opacity * o * (1.0 - o);
        for (int c = 0; c < 3; ++c) {
            const double s = sigmoid(col.out[3 * k + c]);
            d_col[3 * k + c] = up.color[c] * s * (1.0 - s);
            const double log_scale = cov.out[7 * k + c] + std::log(anchor.scaling[c]);
            if (log_scale < kMinLogScale || log_scale > kMaxLogScale) continue;
            const double dlog = up.scale[c] * std::exp(log_scale);
            d_cov[7 * k + c] = dlog;
            g.scaling[c] += dlog / anchor.scaling[c];
        }
        const Vec4 q = raw_quaternion(cov.out, k);
        const double n = q.norm();
        const Vec4 qh = q / n;
        const Vec4 dq = (up.rotation - qh * qh.dot(up.rotation)) / n;
        for (int c = 0; c < 4; ++c) d_cov[7 * k + 3 + c] = dq[c];
    }
    std::vector<double> dx(x.size(), 0.0);
    head_backward(weights.opacity, x, op, d_op, weight_grads.opacity, dx);
    head_backward(weights.color, x, col, d_col, weight_grads.color, dx);
    head_backward(weights.covariance, x, cov, d_cov, weight_grads.covariance, dx);
    for (int f = 0; f < weights.feature_dim; ++f) g.feature[f] = dx[f];
    return g;
}

void write_decoder(std::ostream& out, const DecoderWeights& w) {
    using namespace binary;
    put_magic(out, "HUGD");
    put<std::uint32_t>(out, 1);
    put<std::int32_t>(out, w.block.i);
    put<std::int32_t>(out, w.block.j);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.feature_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.hidden_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.k_off));
    put<double>(out, w.distance_scale);
    for (const MlpHead* h : {&w.opacity, &w.color, &w.covariance}) {
        write_layer(out, h->hidden);
        write_layer(out, h->output);
    }
    if (!out) throw IoError("failed writing decoder weights");
}

DecoderWeights read_decoder(std::istream& in) {
    using namespace binary;
    expect_magic(in, "HUGD");
    if (const auto version = get<std::uint32_t>(in); version != 1)
        throw ParseError("unsupported decoder version " + std::to_string(version));
    BlockId block;
    block.i = get<std::int32_t>(in);
    block.j = get<std::int32_t>(in);
    const auto f = get<std::uint32_t>(in), h = get<std::uint32_t>(in), k = get<std::uint32_t>(in);
    if (f == 0 || h == 0 || k == 0 || f > 4096 || h > 4096 || k > 4096)
        throw ParseError("decoder dimensions are implausible");
    const double scale = get<double>(in);
    DecoderWeights w = init_weights(0, static_cast<int>(f), static_cast<int>(h), static_cast<int>(k), block, scale);
    for (MlpHead* head : {&w.opacity, &w.color, &w.covariance}) {
        read_layer(in, head->hidden);
        read_layer(in, head->output);
    }
    return w;
}

void save_decoder(const DecoderWeights& w, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    write_decoder(out, w);
}

DecoderWeights load_decoder(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_decoder(in);
}

}  // namespace hug
