#include "esk/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "esk/binary_io.hpp"
#include "esk/error.hpp"
#include "esk/metrics.hpp"
#include "esk/rng.hpp"

namespace esk {

namespace {

constexpr double kNormEps = 1e-5;

// Indices into NetModel::params for one conv + normalization pair.
struct ConvNorm {
    std::size_t kernel, gamma, beta, mean, var;
    int in_c, out_c, stride;
    std::size_t norm_index;
};

struct Block {
    ConvNorm first, second;
};

struct Stage {
    ConvNorm down;
    std::vector<Block> blocks;
};

struct Layout {
    std::vector<Stage> stages;
    std::size_t head_w = 0, head_b = 0;
    std::size_t norm_layers = 0;
    std::vector<Tensor> skeleton;  // zero-valued tensors in parameter order
};

Layout make_layout(const NetConfig& cfg) {
    Layout L;
    auto add = [&](std::string name, std::vector<int> shape, bool trainable, bool decay) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        L.skeleton.push_back(Tensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0), trainable, decay});
        return L.skeleton.size() - 1;
    };
    auto conv_norm = [&](const std::string& prefix, int in_c, int out_c, int stride) {
        ConvNorm u{};
        u.in_c = in_c;
        u.out_c = out_c;
        u.stride = stride;
        u.kernel = add(prefix + ".conv.weight", {out_c, in_c, 3, 3}, true, true);
        u.gamma = add(prefix + ".norm.weight", {out_c}, true, false);
        u.beta = add(prefix + ".norm.bias", {out_c}, true, false);
        u.mean = add(prefix + ".norm.running_mean", {out_c}, false, false);
        u.var = add(prefix + ".norm.running_var", {out_c}, false, false);
        u.norm_index = L.norm_layers++;
        return u;
    };
    int in_c = 1;
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        const int c = cfg.stage_channels[s];
        const std::string p = "stage" + std::to_string(s);
        Stage st;
        st.down = conv_norm(p + ".down", in_c, c, 2);
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            const std::string bp = p + ".block" + std::to_string(b);
            st.blocks.push_back({conv_norm(bp + ".a", c, c, 1), conv_norm(bp + ".b", c, c, 1)});
        }
        L.stages.push_back(std::move(st));
        in_c = c;
    }
    L.head_w = add("head.weight", {cfg.embed_dim, cfg.n_classes}, true, true);
    L.head_b = add("head.bias", {cfg.n_classes}, true, false);
    return L;
}

// Checks that the tensor table matches the layout implied by the config.
void check_table(const NetModel& m, const Layout& L) {
    if (m.params.size() != L.skeleton.size())
        throw FormatError("shape table has " + std::to_string(m.params.size()) + " tensors, config implies " +
                          std::to_string(L.skeleton.size()));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const auto& a = m.params[i];
        const auto& b = L.skeleton[i];
        if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size())
            throw FormatError("shape table entry '" + a.name + "' does not match expected '" + b.name + "'");
    }
}

std::size_t clamp_index(long i, int n) { return static_cast<std::size_t>(std::clamp<long>(i, 0, n - 1)); }

int out_size(int n, int stride) { return (n - 1) / stride + 1; }

// --- conv -------------------------------------------------------------------

// im2col with edge replication; rows are (in_c, kt, kd), columns output positions.
std::vector<double> im2col(const FeatureMap& in, int stride, int oh, int ow) {
    const std::size_t P = std::size_t(oh) * ow;
    std::vector<double> col(std::size_t(in.channels) * 9 * P);
    for (int ic = 0; ic < in.channels; ++ic)
        for (int kt = 0; kt < 3; ++kt)
            for (int kd = 0; kd < 3; ++kd) {
                double* dst = col.data() + (std::size_t(ic) * 9 + kt * 3 + kd) * P;
                for (int t = 0; t < oh; ++t) {
                    const double* src =
                        in.values.data() + (std::size_t(ic) * in.height + clamp_index(long(t) * stride + kt - 1, in.height)) * in.width;
                    for (int d = 0; d < ow; ++d) dst[std::size_t(t) * ow + d] = src[clamp_index(long(d) * stride + kd - 1, in.width)];
                }
            }
    return col;
}

FeatureMap conv_forward(const FeatureMap& in, const Tensor& kernel, int out_c, int stride, std::vector<double>* keep_col) {
    FeatureMap out;
    out.channels = out_c;
    out.height = out_size(in.height, stride);
    out.width = out_size(in.width, stride);
    const std::size_t P = std::size_t(out.height) * out.width;
    const std::size_t K = std::size_t(in.channels) * 9;
    auto col = im2col(in, stride, out.height, out.width);
    out.values.assign(std::size_t(out_c) * P, 0.0);
    for (int oc = 0; oc < out_c; ++oc) {
        double* o = out.values.data() + std::size_t(oc) * P;
        const double* w = kernel.values.data() + std::size_t(oc) * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double wk = w[k];
            const double* c = col.data() + k * P;
            for (std::size_t p = 0; p < P; ++p) o[p] += wk * c[p];
        }
    }
    if (keep_col) *keep_col = std::move(col);
    return out;
}

// Accumulates the kernel gradient and returns the input gradient.
FeatureMap conv_backward(const FeatureMap& dout, const std::vector<double>& col, const Tensor& kernel, int in_c,
                         int in_h, int in_w, int stride, std::vector<double>& dkernel) {
    const std::size_t P = std::size_t(dout.height) * dout.width;
    const std::size_t K = std::size_t(in_c) * 9;
    std::vector<double> dcol(K * P, 0.0);
    for (int oc = 0; oc < dout.channels; ++oc) {
        const double* g = dout.values.data() + std::size_t(oc) * P;
        const double* w = kernel.values.data() + std::size_t(oc) * K;
        double* dw = dkernel.data() + std::size_t(oc) * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double* c = col.data() + k * P;
            double* dc = dcol.data() + k * P;
            const double wk = w[k];
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) {
                acc += g[p] * c[p];
                dc[p] += wk * g[p];
            }
            dw[k] += acc;
        }
    }
    FeatureMap din;
    din.channels = in_c;
    din.height = in_h;
    din.width = in_w;
    din.values.assign(std::size_t(in_c) * in_h * in_w, 0.0);
    for (int ic = 0; ic < in_c; ++ic)
        for (int kt = 0; kt < 3; ++kt)
            for (int kd = 0; kd < 3; ++kd) {
                const double* src = dcol.data() + (std::size_t(ic) * 9 + kt * 3 + kd) * P;
                for (int t = 0; t < dout.height; ++t) {
                    double* dst = din.values.data() + (std::size_t(ic) * in_h + clamp_index(long(t) * stride + kt - 1, in_h)) * in_w;
                    for (int d = 0; d < dout.width; ++d)
                        dst[clamp_index(long(d) * stride + kd - 1, in_w)] += src[std::size_t(t) * dout.width + d];
                }
            }
    return din;
}

// --- forward/backward over a batch -------------------------------------------

using Batch = std::vector<FeatureMap>;

struct UnitCache {
    std::vector<std::vector<double>> cols;
    Batch xhat;
    std::vector<double> inv_std;
    Batch out;  // after the optional rectifier
    int in_c = 0;
    std::vector<std::pair<int, int>> in_dims;
};

struct BlockCache {
    UnitCache first, second;
    Batch out;
};

struct StageCache {
    UnitCache down;
    std::vector<BlockCache> blocks;
};

struct Tape {
    std::vector<StageCache> stages;
    std::vector<NormStats> stats;
};

class Net {
public:
    Net(const NetModel& model) : m_(model), L_(make_layout(model.config)) { check_table(model, L_); }

    const Layout& layout() const { return L_; }

    // Runs every stage; training mode uses batch statistics and fills the tape.
    Batch body(Batch x, Tape* tape) const {
        if (tape) {
            tape->stages.resize(L_.stages.size());
            tape->stats.resize(L_.norm_layers);
        }
        for (std::size_t s = 0; s < L_.stages.size(); ++s) {
            const Stage& st = L_.stages[s];
            StageCache* sc = tape ? &tape->stages[s] : nullptr;
            if (sc) sc->blocks.resize(st.blocks.size());
            x = unit(st.down, x, true, sc ? &sc->down : nullptr, tape);
            for (std::size_t b = 0; b < st.blocks.size(); ++b) {
                BlockCache* bc = sc ? &sc->blocks[b] : nullptr;
                Batch a = unit(st.blocks[b].first, x, true, bc ? &bc->first : nullptr, tape);
                Batch y = unit(st.blocks[b].second, a, false, bc ? &bc->second : nullptr, tape);
                for (std::size_t i = 0; i < y.size(); ++i)
                    for (std::size_t j = 0; j < y[i].values.size(); ++j)
                        y[i].values[j] = std::max(0.0, y[i].values[j] + x[i].values[j]);
                if (bc) bc->out = y;
                x = std::move(y);
            }
        }
        return x;
    }

    // Backpropagates d(final map) through the body, accumulating into grads.
    void body_backward(Batch g, const Tape& tape, std::vector<std::vector<double>>& grads) const {
        for (std::size_t s = L_.stages.size(); s-- > 0;) {
            const Stage& st = L_.stages[s];
            const StageCache& sc = tape.stages[s];
            for (std::size_t b = st.blocks.size(); b-- > 0;) {
                const BlockCache& bc = sc.blocks[b];
                for (std::size_t i = 0; i < g.size(); ++i)
                    for (std::size_t j = 0; j < g[i].values.size(); ++j)
                        if (bc.out[i].values[j] <= 0.0) g[i].values[j] = 0.0;
                Batch da = unit_backward(st.blocks[b].second, g, bc.second, false, grads);
                Batch dx = unit_backward(st.blocks[b].first, std::move(da), bc.first, true, grads);
                for (std::size_t i = 0; i < g.size(); ++i)
                    for (std::size_t j = 0; j < g[i].values.size(); ++j) g[i].values[j] += dx[i].values[j];
            }
            g = unit_backward(st.down, std::move(g), sc.down, true, grads);
        }
    }

    std::vector<double> head(std::span<const double> e) const {
        const int K = m_.config.n_classes;
        const auto& W = m_.params[L_.head_w].values;
        std::vector<double> z(m_.params[L_.head_b].values);
        for (std::size_t c = 0; c < e.size(); ++c)
            for (int k = 0; k < K; ++k) z[k] += W[c * K + k] * e[c];
        return z;
    }

private:
    Batch unit(const ConvNorm& u, const Batch& x, bool relu, UnitCache* cache, Tape* tape) const {
        const bool training = tape != nullptr;
        Batch y(x.size());
        if (cache) {
            cache->cols.resize(x.size());
            cache->in_c = u.in_c;
            cache->in_dims.clear();
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = conv_forward(x[i], m_.params[u.kernel], u.out_c, u.stride, cache ? &cache->cols[i] : nullptr);
            if (cache) cache->in_dims.emplace_back(x[i].height, x[i].width);
        }
        const auto& gamma = m_.params[u.gamma].values;
        const auto& beta = m_.params[u.beta].values;
        if (training) {
            NormStats& st = tape->stats[u.norm_index];
            st.mean.assign(u.out_c, 0.0);
            st.var_unbiased.assign(u.out_c, 0.0);
            cache->inv_std.assign(u.out_c, 0.0);
            cache->xhat = y;
            for (int c = 0; c < u.out_c; ++c) {
                double sum = 0.0;
                std::size_t count = 0;
                for (const auto& yi : y) {
                    const std::size_t P = std::size_t(yi.height) * yi.width;
                    const double* v = yi.values.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) sum += v[p];
                    count += P;
                }
                const double mean = sum / double(count);
                double ss = 0.0;
                for (const auto& yi : y) {
                    const std::size_t P = std::size_t(yi.height) * yi.width;
                    const double* v = yi.values.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) ss += (v[p] - mean) * (v[p] - mean);
                }
                const double var = ss / double(count);
                const double inv_std = 1.0 / std::sqrt(var + kNormEps);
                st.mean[c] = mean;
                st.var_unbiased[c] = count > 1 ? ss / double(count - 1) : var;
                cache->inv_std[c] = inv_std;
                for (std::size_t i = 0; i < y.size(); ++i) {
                    const std::size_t P = std::size_t(y[i].height) * y[i].width;
                    double* v = y[i].values.data() + c * P;
                    double* xh = cache->xhat[i].values.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) {
                        xh[p] = (v[p] - mean) * inv_std;
                        v[p] = gamma[c] * xh[p] + beta[c];
                    }
                }
            }
        } else {
            const auto& rm = m_.params[u.mean].values;
            const auto& rv = m_.params[u.var].values;
            for (auto& yi : y) {
                const std::size_t P = std::size_t(yi.height) * yi.width;
                for (int c = 0; c < u.out_c; ++c) {
                    const double scale = gamma[c] / std::sqrt(rv[c] + kNormEps);
                    double* v = yi.values.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) v[p] = scale * (v[p] - rm[c]) + beta[c];
                }
            }
        }
        if (relu)
            for (auto& yi : y)
                for (auto& v : yi.values) v = std::max(0.0, v);
        if (cache) cache->out = y;
        return y;
    }

    Batch unit_backward(const ConvNorm& u, Batch g, const UnitCache& cache, bool relu,
                        std::vector<std::vector<double>>& grads) const {
        if (relu)
            for (std::size_t i = 0; i < g.size(); ++i)
                for (std::size_t j = 0; j < g[i].values.size(); ++j)
                    if (cache.out[i].values[j] <= 0.0) g[i].values[j] = 0.0;
        const auto& gamma = m_.params[u.gamma].values;
        auto& dgamma = grads[u.gamma];
        auto& dbeta = grads[u.beta];
        for (int c = 0; c < u.out_c; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t P = std::size_t(g[i].height) * g[i].width;
                const double* gv = g[i].values.data() + c * P;
                const double* xh = cache.xhat[i].values.data() + c * P;
                for (std::size_t p = 0; p < P; ++p) {
                    sum_g += gv[p];
                    sum_gx += gv[p] * xh[p];
                }
                count += P;
            }
            dgamma[c] += sum_gx;
            dbeta[c] += sum_g;
            // dx = gamma * inv_std / M * (M g - sum g - xhat * sum(g xhat))
            const double M = double(count);
            const double k = gamma[c] * cache.inv_std[c] / M;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t P = std::size_t(g[i].height) * g[i].width;
                double* gv = g[i].values.data() + c * P;
                const double* xh = cache.xhat[i].values.data() + c * P;
                for (std::size_t p = 0; p < P; ++p) gv[p] = k * (M * gv[p] - sum_g - xh[p] * sum_gx);
            }
        }
        Batch dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            dx[i] = conv_backward(g[i], cache.cols[i], m_.params[u.kernel], cache.in_c, cache.in_dims[i].first,
                                  cache.in_dims[i].second, u.stride, grads[u.kernel]);
        return dx;
    }

    const NetModel& m_;
    Layout L_;
};

FeatureMap to_map(const FeatureMatrix& f, const NetConfig& cfg) {
    const std::size_t min_len = std::size_t(1) << cfg.stages();
    if (f.frames() < min_len)
        throw Error("input of " + std::to_string(f.frames()) + " frames is too short; need at least " +
                    std::to_string(min_len));
    if (f.dims() == 0) throw Error("input has no feature columns");
    if (cfg.input_dim != 0 && f.dims() != std::size_t(cfg.input_dim))
        throw Error("input has " + std::to_string(f.dims()) + " feature columns, model expects " +
                    std::to_string(cfg.input_dim));
    FeatureMap m;
    m.channels = 1;
    m.height = static_cast<int>(f.frames());
    m.width = static_cast<int>(f.dims());
    m.values = f.values.data;
    return m;
}

std::vector<double> global_average(const FeatureMap& m) {
    const std::size_t P = std::size_t(m.height) * m.width;
    std::vector<double> e(m.channels);
    for (int c = 0; c < m.channels; ++c) {
        const double* v = m.values.data() + c * P;
        e[c] = std::accumulate(v, v + P, 0.0) / double(P);
    }
    return e;
}

void check_weights(std::span<const double> w, int k) {
    if (w.size() != std::size_t(k))
        throw Error("class weights have " + std::to_string(w.size()) + " entries, expected " + std::to_string(k));
    for (double x : w)
        if (!(x > 0) || !std::isfinite(x)) throw Error("class weights must be positive and finite");
}

}  // namespace

// --- config ----------------------------------------------------------------

std::vector<int> scaled_channels(std::size_t stages, int embed_dim) {
    std::vector<int> ch(stages);
    for (std::size_t s = 0; s < stages; ++s) {
        const int base = 16 << s;
        const int last = 16 << (stages - 1);
        ch[s] = std::max(1, static_cast<int>(std::llround(double(base) * embed_dim / last)));
    }
    ch.back() = embed_dim;
    return ch;
}

NetConfig NetConfig::resnet18(int embed_dim, int n_classes) {
    NetConfig c;
    c.blocks_per_stage = {2, 2, 2, 2};
    c.stage_channels = scaled_channels(4, embed_dim);
    c.embed_dim = embed_dim;
    c.n_classes = n_classes;
    return c;
}

NetConfig NetConfig::resnet9(int embed_dim, int n_classes) {
    NetConfig c = resnet18(embed_dim, n_classes);
    c.blocks_per_stage = {1, 1, 1, 1};
    return c;
}

NetConfig NetConfig::test_preset(int embed_dim, int n_classes) {
    NetConfig c;
    c.blocks_per_stage = {1, 1};
    c.stage_channels = scaled_channels(2, embed_dim);
    c.embed_dim = embed_dim;
    c.n_classes = n_classes;
    return c;
}

void validate(const NetConfig& cfg) {
    if (cfg.blocks_per_stage.empty()) throw Error("network needs at least one stage");
    if (cfg.blocks_per_stage.size() != cfg.stage_channels.size())
        throw Error("blocks_per_stage and stage_channels differ in length");
    for (int b : cfg.blocks_per_stage)
        if (b < 0) throw Error("blocks per stage must be nonnegative");
    for (int c : cfg.stage_channels)
        if (c < 1) throw Error("stage channels must be positive");
    if (cfg.embed_dim != cfg.stage_channels.back())
        throw Error("embed_dim " + std::to_string(cfg.embed_dim) + " must equal the last stage width " +
                    std::to_string(cfg.stage_channels.back()));
    if (cfg.n_classes < 2) throw Error("need at least two classes");
    if (cfg.input_dim < 0) throw Error("input_dim must be nonnegative");
    if (!(cfg.label_smoothing >= 0 && cfg.label_smoothing < 1)) throw Error("label smoothing must be in [0, 1)");
}

const Tensor& NetModel::param(const std::string& name) const {
    for (const auto& t : params)
        if (t.name == name) return t;
    throw Error("no parameter named '" + name + "'");
}

Tensor& NetModel::param(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).param(name));
}

namespace {

void kaiming_uniform(Tensor& t, std::size_t fan_in, double gain, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = gain * std::sqrt(3.0 / double(fan_in));
    for (auto& v : t.values) v = rng.uniform(-bound, bound);
}

void init_head(NetModel& m, const Layout& L, std::uint64_t seed) {
    // Linear output layer: unit gain.
    kaiming_uniform(m.params[L.head_w], std::size_t(m.config.embed_dim), 1.0, seed);
    std::fill(m.params[L.head_b].values.begin(), m.params[L.head_b].values.end(), 0.0);
}

}  // namespace

NetModel init_model(const NetConfig& cfg) {
    validate(cfg);
    Layout L = make_layout(cfg);
    NetModel m;
    m.config = cfg;
    m.params = L.skeleton;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        Tensor& t = m.params[i];
        const std::string& n = t.name;
        if (n.ends_with(".conv.weight")) {
            kaiming_uniform(t, std::size_t(t.shape[1]) * 9, std::sqrt(2.0), mix_seed(cfg.seed, i));
        } else if (n.ends_with(".norm.weight") || n.ends_with(".running_var")) {
            std::fill(t.values.begin(), t.values.end(), 1.0);
        }
    }
    init_head(m, L, mix_seed(cfg.seed, 0x4eadULL, std::uint64_t(cfg.n_classes)));
    round_to_storage(m);
    return m;
}

void round_to_storage(NetModel& model) {
    for (auto& t : model.params)
        for (auto& v : t.values) v = static_cast<double>(static_cast<float>(v));
}

// --- inference -------------------------------------------------------------

ForwardResult forward(const NetModel& model, const FeatureMatrix& features) {
    Net net(model);
    Batch x{to_map(features, model.config)};
    Batch y = net.body(std::move(x), nullptr);
    ForwardResult r;
    r.final_map = std::move(y[0]);
    r.embedding = global_average(r.final_map);
    r.logits = net.head(r.embedding);
    return r;
}

std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw Error("softmax of empty vector");
    for (double v : z)
        if (!std::isfinite(v)) throw Error("non-finite logit");
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) sum += p[k] = std::exp(z[k] - mx);
    for (auto& v : p) v /= sum;
    return p;
}

namespace {

// Returns the loss and writes dloss/dlogits.
double loss_and_grad(std::span<const double> z, int target, double weight, double eps, std::vector<double>& dz) {
    const std::size_t K = z.size();
    for (double v : z)
        if (!std::isfinite(v)) throw Error("non-finite logit");
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_sum = std::log(sum);
    double total = 0.0;
    dz.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const double q = (k == std::size_t(target) ? 1.0 - eps : 0.0) + eps / double(K);
        const double log_p = z[k] - mx - log_sum;
        if (q != 0.0) total -= q * log_p;
        dz[k] = weight * (std::exp(log_p) - q);
    }
    return weight * total;
}

}  // namespace

double loss(std::span<const double> logits, int target, std::span<const double> class_weights, double eps) {
    const int K = static_cast<int>(logits.size());
    if (K < 1) throw Error("loss of empty logits");
    if (target < 0 || target >= K) throw Error("target class " + std::to_string(target) + " out of range");
    check_weights(class_weights, K);
    if (!(eps >= 0 && eps < 1)) throw Error("label smoothing must be in [0, 1)");
    std::vector<double> dz;
    return loss_and_grad(logits, target, class_weights[target], eps, dz);
}

// --- training --------------------------------------------------------------

GradResult grad(const NetModel& model, std::span<const Example> batch, std::span<const double> class_weights,
                double eps) {
    if (batch.empty()) throw Error("grad: empty batch");
    const int K = model.config.n_classes;
    check_weights(class_weights, K);
    Net net(model);
    const Layout& L = net.layout();

    Batch x;
    x.reserve(batch.size());
    for (const auto& ex : batch) {
        if (ex.label < 0 || ex.label >= K) throw Error("label " + std::to_string(ex.label) + " out of range");
        x.push_back(to_map(*ex.features, model.config));
    }
    Tape tape;
    Batch y = net.body(std::move(x), &tape);

    GradResult r;
    r.grads.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        if (model.params[i].trainable) r.grads[i].assign(model.params[i].values.size(), 0.0);

    const double inv_b = 1.0 / double(batch.size());
    const auto& W = model.params[L.head_w].values;
    auto& dW = r.grads[L.head_w];
    auto& db = r.grads[L.head_b];
    Batch g(y.size());
    std::vector<double> dz;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto e = global_average(y[i]);
        const auto z = net.head(e);
        const int t = batch[i].label;
        r.loss += inv_b * loss_and_grad(z, t, class_weights[t], eps, dz);
        for (auto& v : dz) v *= inv_b;
        std::vector<double> de(e.size(), 0.0);
        for (std::size_t c = 0; c < e.size(); ++c)
            for (int k = 0; k < K; ++k) {
                dW[c * K + k] += e[c] * dz[k];
                de[c] += W[c * K + k] * dz[k];
            }
        for (int k = 0; k < K; ++k) db[k] += dz[k];
        g[i].channels = y[i].channels;
        g[i].height = y[i].height;
        g[i].width = y[i].width;
        const std::size_t P = std::size_t(y[i].height) * y[i].width;
        g[i].values.resize(y[i].values.size());
        for (int c = 0; c < y[i].channels; ++c)
            std::fill_n(g[i].values.begin() + c * P, P, de[c] / double(P));
    }
    net.body_backward(std::move(g), tape, r.grads);
    r.norm_stats = std::move(tape.stats);
    return r;
}

TrainConfig TrainConfig::pretrain() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune() {
    TrainConfig c;
    c.momentum = 0.0;
    c.max_epochs = 300;
    return c;
}

void sgd_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
              std::vector<std::vector<double>>& velocity, const TrainConfig& cfg) {
    if (grads.size() != params.size()) throw Error("sgd_step: gradient list does not match parameters");
    velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.trainable) continue;
        if (grads[i].size() != p.values.size()) throw Error("sgd_step: gradient shape mismatch for " + p.name);
        auto& v = velocity[i];
        v.resize(p.values.size(), 0.0);
        const double wd = p.decay ? cfg.weight_decay : 0.0;
        for (std::size_t j = 0; j < p.values.size(); ++j) {
            const double g = grads[i][j] + wd * p.values[j];
            v[j] = cfg.momentum * v[j] + g;
            p.values[j] -= cfg.lr * v[j];
        }
    }
}

void update_running_stats(NetModel& model, const std::vector<NormStats>& stats, double momentum) {
    const Layout L = make_layout(model.config);
    auto update = [&](const ConvNorm& u) {
        const NormStats& s = stats.at(u.norm_index);
        auto& rm = model.params[u.mean].values;
        auto& rv = model.params[u.var].values;
        for (int c = 0; c < u.out_c; ++c) {
            rm[c] = momentum * rm[c] + (1.0 - momentum) * s.mean[c];
            rv[c] = momentum * rv[c] + (1.0 - momentum) * s.var_unbiased[c];
        }
    };
    for (const Stage& st : L.stages) {
        update(st.down);
        for (const Block& b : st.blocks) {
            update(b.first);
            update(b.second);
        }
    }
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw Error("early stopping patience must be at least 1");
}

bool EarlyStopping::update(double metric) {
    ++epoch_;
    if (epoch_ == 1 || metric > best_) {
        best_ = metric;
        best_epoch_ = epoch_;
        since_best_ = 0;
    } else {
        ++since_best_;
    }
    return since_best_ >= patience_;
}

std::vector<int> predict(const NetModel& model, std::span<const LabeledFeatures> set) {
    std::vector<int> out;
    out.reserve(set.size());
    for (const auto& ex : set) {
        const auto z = forward(model, ex.features).logits;
        out.push_back(static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
    }
    return out;
}

TrainResult train(const NetModel& init, std::span<const LabeledFeatures> train_set,
                  std::span<const LabeledFeatures> devel_set, const TrainConfig& cfg, const DevelMetric& devel_metric) {
    if (train_set.empty() || devel_set.empty()) throw Error("train: training and devel sets must be nonempty");
    if (!(cfg.lr > 0)) throw Error("learning rate must be positive");
    if (cfg.batch_size < 1) throw Error("batch size must be positive");
    if (cfg.max_epochs < 1) throw Error("max_epochs must be positive");
    const int K = init.config.n_classes;
    for (auto set : {train_set, devel_set})
        for (const auto& ex : set)
            if (ex.label < 0 || ex.label >= K)
                throw Error("label " + std::to_string(ex.label) + " outside [0, " + std::to_string(K) + ")");

    std::vector<double> weights = cfg.class_weights;
    if (weights.empty()) {
        std::vector<std::size_t> counts(K, 0);
        for (const auto& ex : train_set) ++counts[ex.label];
        for (auto& c : counts) c = std::max<std::size_t>(c, 1);
        weights = class_weights_from_counts(counts);
    }
    check_weights(weights, K);

    NetModel model = init;
    TrainResult result{model, {}};
    EarlyStopping stopper(cfg.early_stop_patience);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::vector<std::vector<double>> velocity;
    const double eps = model.config.label_smoothing;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<Example> batch;
            for (std::size_t i = start; i < end; ++i)
                batch.push_back({&train_set[order[i]].features, train_set[order[i]].label});
            GradResult g = grad(model, batch, weights, eps);
            loss_sum += g.loss * double(end - start);
            sgd_step(model.params, g.grads, velocity, cfg);
            update_running_stats(model, g.norm_stats, cfg.norm_momentum);
            round_to_storage(model);
        }
        EpochRecord rec;
        rec.train_loss = loss_sum / double(order.size());
        if (devel_metric) {
            rec.devel_uar = devel_metric(model, epoch);
        } else {
            std::vector<int> truth;
            for (const auto& ex : devel_set) truth.push_back(ex.label);
            rec.devel_uar = evaluate(truth, predict(model, devel_set), K).uar;
        }
        result.history.epochs.push_back(rec);
        const bool stop = stopper.update(rec.devel_uar);
        if (stopper.improved()) result.model = model;
        result.history.stopped_epoch = epoch;
        if (stop) break;
    }
    result.history.best_epoch = stopper.best_epoch();
    return result;
}

NetModel swap_head(const NetModel& model, int new_n_classes, std::optional<std::uint64_t> seed) {
    if (new_n_classes < 2) throw Error("swap_head: need at least two classes");
    NetModel out;
    out.config = model.config;
    out.config.n_classes = new_n_classes;
    const Layout old_layout = make_layout(model.config);
    check_table(model, old_layout);
    const Layout L = make_layout(out.config);
    out.params = L.skeleton;
    for (std::size_t i = 0; i < out.params.size(); ++i)
        if (i != L.head_w && i != L.head_b) out.params[i].values = model.params[i].values;
    // Separate stream from init_model, so swapping to the same class count re-randomizes the head.
    const std::uint64_t s = seed ? *seed : mix_seed(model.config.seed, 0x5a4dULL, std::uint64_t(new_n_classes));
    init_head(out, L, s);
    round_to_storage(out);
    return out;
}

std::vector<double> class_weights_from_counts(std::span<const std::size_t> counts) {
    if (counts.empty()) throw Error("no class counts");
    double total = 0.0;
    for (auto n : counts) {
        if (n == 0) throw Error("class count of zero; every class needs an example");
        total += double(n);
    }
    std::vector<double> w(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) w[k] = total / (double(counts.size()) * double(counts[k]));
    return w;
}

// --- persistence -----------------------------------------------------------

void save_model(const std::filesystem::path& path, const NetModel& model) {
    check_table(model, make_layout(model.config));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    const NetConfig& c = model.config;
    binio::put_magic(f, "ESKM");
    binio::put<std::uint16_t>(f, kModelFormatVersion);
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(c.stages()));
    for (std::size_t s = 0; s < c.stages(); ++s) {
        binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(c.blocks_per_stage[s]));
        binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(c.stage_channels[s]));
    }
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(c.embed_dim));
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(c.n_classes));
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(c.input_dim));
    binio::put<double>(f, c.label_smoothing);
    binio::put<std::uint64_t>(f, c.seed);
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& t : model.params) {
        binio::put_string(f, t.name);
        binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(d));
        for (double v : t.values) binio::put<float>(f, static_cast<float>(v));
    }
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

NetModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    binio::expect_magic(f, "ESKM");
    const auto version = binio::get<std::uint16_t>(f);
    if (version != kModelFormatVersion)
        throw FormatError("model format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kModelFormatVersion) + ")");
    NetModel m;
    NetConfig& c = m.config;
    const auto stages = binio::get<std::uint32_t>(f);
    if (stages == 0 || stages > 16) throw FormatError("implausible stage count " + std::to_string(stages));
    c.blocks_per_stage.resize(stages);
    c.stage_channels.resize(stages);
    for (std::uint32_t s = 0; s < stages; ++s) {
        c.blocks_per_stage[s] = static_cast<int>(binio::get<std::uint32_t>(f));
        c.stage_channels[s] = static_cast<int>(binio::get<std::uint32_t>(f));
    }
    c.embed_dim = static_cast<int>(binio::get<std::uint32_t>(f));
    c.n_classes = static_cast<int>(binio::get<std::uint32_t>(f));
    c.input_dim = static_cast<int>(binio::get<std::uint32_t>(f));
    c.label_smoothing = binio::get<double>(f);
    c.seed = binio::get<std::uint64_t>(f);
    try {
        validate(c);
    } catch (const Error& e) {
        throw FormatError(std::string("stored config invalid: ") + e.what());
    }
    const Layout L = make_layout(c);
    const auto n = binio::get<std::uint32_t>(f);
    if (n != L.skeleton.size())
        throw FormatError("shape table has " + std::to_string(n) + " tensors, config implies " +
                          std::to_string(L.skeleton.size()));
    m.params = L.skeleton;
    for (auto& t : m.params) {
        const auto name = binio::get_string(f, 4096);
        const auto rank = binio::get<std::uint32_t>(f);
        std::vector<int> shape;
        for (std::uint32_t r = 0; r < rank && r < 8; ++r) shape.push_back(static_cast<int>(binio::get<std::uint32_t>(f)));
        if (name != t.name || shape != t.shape)
            throw FormatError("shape table entry '" + name + "' inconsistent with config (expected '" + t.name + "')");
        for (auto& v : t.values) v = binio::get<float>(f);
    }
    return m;
}

NetModel load_model(const std::filesystem::path& path, const NetConfig& expected) {
    NetModel m = load_model(path);
    const NetConfig& c = m.config;
    if (c.blocks_per_stage != expected.blocks_per_stage || c.stage_channels != expected.stage_channels ||
        c.embed_dim != expected.embed_dim || c.n_classes != expected.n_classes ||
        (expected.input_dim != 0 && c.input_dim != expected.input_dim))
        throw Error("model '" + path.string() + "' has a different architecture (shape mismatch)");
    return m;
}

}  // namespace esk
