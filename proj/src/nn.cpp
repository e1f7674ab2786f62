#include "pdm/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pdm/error.hpp"
#include "pdm/log.hpp"

namespace pdm::nn {

namespace {

constexpr double kBnEps = 1e-8;
constexpr double kBnMomentum = 0.9;

MatrixXd sigmoid(const MatrixXd& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

void check_finite(const MatrixXd& m, int layer, int t) {
    if (!m.allFinite())
        throw NumericError("non-finite activation in layer " + std::to_string(layer) +
                           ", timestep " + std::to_string(t));
}

// Fills col-major so the draw order is a fixed function of the shape.
void fill_uniform(MatrixXd& m, Rng& rng, double lo, double hi) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(lo, hi);
}

int layer_input_size(const ModelConfig& config, int layer) {
    return layer == 0 ? config.input_size : config.hidden_size;
}

MatrixXd sample_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    MatrixXd mask(rows, cols);
    const double keep_scale = 1.0 / (1.0 - p);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r)
            mask(r, c) = rng.uniform() >= p ? keep_scale : 0.0;
    return mask;
}

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError("checkpoint truncated");
}

void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }
void write_i64(std::ofstream& out, std::int64_t v) { write_bytes(out, &v, sizeof v); }
void write_f64(std::ofstream& out, double v) { write_bytes(out, &v, sizeof v); }

std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}
std::int64_t read_i64(std::ifstream& in) {
    std::int64_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}
double read_f64(std::ifstream& in) {
    double v;
    read_bytes(in, &v, sizeof v);
    return v;
}

void write_matrix(std::ofstream& out, const MatrixXd& m) {
    write_i64(out, m.rows());
    write_i64(out, m.cols());
    write_bytes(out, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

MatrixXd read_matrix(std::ifstream& in) {
    const auto rows = read_i64(in);
    const auto cols = read_i64(in);
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 32))
        throw SchemaError("checkpoint matrix has implausible shape");
    MatrixXd m(rows, cols);
    read_bytes(in, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
}

void write_vector(std::ofstream& out, const VectorXd& v) {
    write_i64(out, v.size());
    write_bytes(out, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

VectorXd read_vector(std::ifstream& in) {
    const auto n = read_i64(in);
    if (n < 0 || n > (1LL << 32)) throw SchemaError("checkpoint vector has implausible length");
    VectorXd v(n);
    read_bytes(in, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    return v;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
    if (input_size < 1) throw ConfigError("input_size must be >= 1");
    if (n_classes != 3) throw ConfigError("n_classes must be 3");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0,1)");
    if (l2_lambda < 0.0) throw ConfigError("l2_lambda must be >= 0");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
        throw ConfigError("adam betas must be in [0,1)");
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be > 0");
}

LstmModel init(const ModelConfig& config) {
    config.validate();
    LstmModel model;
    model.config = config;
    Rng rng(sub_seed(config.seed, "init"));
    const int h = config.hidden_size;
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));

    for (int l = 0; l < config.n_layers; ++l) {
        const int in = layer_input_size(config, l);
        LstmLayer layer;
        layer.w.resize(in + h, 4 * h);
        fill_uniform(layer.w, rng, -bound, bound);
        layer.b = VectorXd::Zero(4 * h);
        layer.b.segment(h, h).setOnes();  // forget gate opens at init
        layer.bn_gamma = VectorXd::Ones(h);
        layer.bn_beta = VectorXd::Zero(h);
        layer.bn_running_mean = VectorXd::Zero(h);
        layer.bn_running_var = VectorXd::Ones(h);
        model.layers.push_back(std::move(layer));
    }
    model.head.w.resize(h, config.n_classes);
    fill_uniform(model.head.w, rng, -bound, bound);
    model.head.b = VectorXd::Zero(config.n_classes);

    model.adam_m = zero_like(model);
    model.adam_v = zero_like(model);
    model.adam_step_count = 0;
    return model;
}

Gradients zero_like(const LstmModel& model) {
    Gradients g;
    for (const auto& layer : model.layers) {
        LayerGrads lg;
        lg.w = MatrixXd::Zero(layer.w.rows(), layer.w.cols());
        lg.b = VectorXd::Zero(layer.b.size());
        lg.bn_gamma = VectorXd::Zero(layer.bn_gamma.size());
        lg.bn_beta = VectorXd::Zero(layer.bn_beta.size());
        g.layers.push_back(std::move(lg));
    }
    g.head_w = MatrixXd::Zero(model.head.w.rows(), model.head.w.cols());
    g.head_b = VectorXd::Zero(model.head.b.size());
    return g;
}

std::size_t param_count(const LstmModel& model) {
    std::size_t n = 0;
    for (const auto& l : model.layers)
        n += static_cast<std::size_t>(l.w.size() + l.b.size() + l.bn_gamma.size() +
                                      l.bn_beta.size());
    return n + static_cast<std::size_t>(model.head.w.size() + model.head.b.size());
}

void for_each_param(LstmModel& model, const std::function<void(double&)>& fn) {
    for (auto& l : model.layers) {
        for (Eigen::Index i = 0; i < l.w.size(); ++i) fn(l.w.data()[i]);
        for (Eigen::Index i = 0; i < l.b.size(); ++i) fn(l.b.data()[i]);
        for (Eigen::Index i = 0; i < l.bn_gamma.size(); ++i) fn(l.bn_gamma.data()[i]);
        for (Eigen::Index i = 0; i < l.bn_beta.size(); ++i) fn(l.bn_beta.data()[i]);
    }
    for (Eigen::Index i = 0; i < model.head.w.size(); ++i) fn(model.head.w.data()[i]);
    for (Eigen::Index i = 0; i < model.head.b.size(); ++i) fn(model.head.b.data()[i]);
}

void for_each_grad(const Gradients& grads, const std::function<void(double)>& fn) {
    for (const auto& l : grads.layers) {
        for (Eigen::Index i = 0; i < l.w.size(); ++i) fn(l.w.data()[i]);
        for (Eigen::Index i = 0; i < l.b.size(); ++i) fn(l.b.data()[i]);
        for (Eigen::Index i = 0; i < l.bn_gamma.size(); ++i) fn(l.bn_gamma.data()[i]);
        for (Eigen::Index i = 0; i < l.bn_beta.size(); ++i) fn(l.bn_beta.data()[i]);
    }
    for (Eigen::Index i = 0; i < grads.head_w.size(); ++i) fn(grads.head_w.data()[i]);
    for (Eigen::Index i = 0; i < grads.head_b.size(); ++i) fn(grads.head_b.data()[i]);
}

Batch make_batch(const std::vector<const Window*>& windows, bool with_targets) {
    if (windows.empty()) throw ContractError("empty batch");
    Batch batch;
    batch.b = static_cast<int>(windows.size());
    batch.t = static_cast<int>(kWindowLen);
    const auto f = static_cast<Eigen::Index>(windows.front()->feature_count());
    batch.x.resize(static_cast<Eigen::Index>(batch.b) * batch.t, f);
    if (with_targets) batch.targets.resize(static_cast<std::size_t>(batch.b) * kWindowLen);

    for (int b = 0; b < batch.b; ++b) {
        const Window& w = *windows[static_cast<std::size_t>(b)];
        if (static_cast<Eigen::Index>(w.feature_count()) != f)
            throw ContractError("window feature counts differ within one batch");
        if (w.features.size() != kWindowLen)
            throw ContractError("window does not have exactly 10 rows");
        if (with_targets && !w.labeled())
            throw ContractError("unlabeled window in a training batch");
        for (int t = 0; t < batch.t; ++t) {
            const auto row = static_cast<Eigen::Index>(t) * batch.b + b;
            if (static_cast<Eigen::Index>(w.features[static_cast<std::size_t>(t)].size()) != f)
                throw ContractError("window feature rows have uneven widths");
            for (Eigen::Index j = 0; j < f; ++j)
                batch.x(row, j) = w.features[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
            if (with_targets)
                batch.targets[static_cast<std::size_t>(row)] =
                    to_index(w.labels[static_cast<std::size_t>(t)]);
        }
    }
    return batch;
}

ForwardCache forward(LstmModel& model, const Batch& batch, const ForwardOptions& options) {
    const ModelConfig& config = model.config;
    if (batch.x.cols() != config.input_size)
        throw ContractError("batch has " + std::to_string(batch.x.cols()) +
                            " features, model expects " + std::to_string(config.input_size));
    const int b = batch.b;
    const int t_len = batch.t;
    const Eigen::Index rows = batch.x.rows();
    const int h = config.hidden_size;
    const bool dropout_on = options.training && config.dropout_rate > 0.0;
    if (dropout_on && !options.dropout_masks && !options.rng)
        throw ContractError("training-mode forward with dropout needs an rng or fixed masks");

    ForwardCache cache;
    cache.b = b;
    cache.t = t_len;
    cache.training = options.training;
    cache.bn_used_batch_stats = options.training && !options.bn_use_running;
    cache.layers.resize(static_cast<std::size_t>(config.n_layers));

    const MatrixXd* x = &batch.x;
    for (int l = 0; l < config.n_layers; ++l) {
        LstmLayer& layer = model.layers[static_cast<std::size_t>(l)];
        LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
        const int in = layer_input_size(config, l);
        lc.x = *x;

        // Input contribution for every timestep in one product; the loop
        // below only adds the recurrent term.
        MatrixXd z_all = lc.x * layer.w.topRows(in);
        z_all.rowwise() += layer.b.transpose();

        lc.gate_i.resize(rows, h);
        lc.gate_f.resize(rows, h);
        lc.gate_g.resize(rows, h);
        lc.gate_o.resize(rows, h);
        lc.c.resize(rows, h);
        lc.tanh_c.resize(rows, h);
        lc.h.resize(rows, h);

        MatrixXd h_prev = MatrixXd::Zero(b, h);
        MatrixXd c_prev = MatrixXd::Zero(b, h);
        for (int t = 0; t < t_len; ++t) {
            const Eigen::Index r0 = static_cast<Eigen::Index>(t) * b;
            MatrixXd z = z_all.middleRows(r0, b) + h_prev * layer.w.bottomRows(h);
            auto zi = z.leftCols(h);
            auto zf = z.middleCols(h, h);
            auto zg = z.middleCols(2 * h, h);
            auto zo = z.rightCols(h);

            lc.gate_i.middleRows(r0, b) = sigmoid(zi);
            lc.gate_f.middleRows(r0, b) = sigmoid(zf);
            lc.gate_g.middleRows(r0, b) = zg.array().tanh().matrix();
            lc.gate_o.middleRows(r0, b) = sigmoid(zo);

            lc.c.middleRows(r0, b) =
                lc.gate_f.middleRows(r0, b).cwiseProduct(c_prev) +
                lc.gate_i.middleRows(r0, b).cwiseProduct(lc.gate_g.middleRows(r0, b));
            lc.tanh_c.middleRows(r0, b) = lc.c.middleRows(r0, b).array().tanh().matrix();
            lc.h.middleRows(r0, b) =
                lc.gate_o.middleRows(r0, b).cwiseProduct(lc.tanh_c.middleRows(r0, b));

            check_finite(lc.h.middleRows(r0, b), l, t);
            h_prev = lc.h.middleRows(r0, b);
            c_prev = lc.c.middleRows(r0, b);
        }

        // Batch norm per hidden feature over all batch x time rows.
        VectorXd mean, var;
        if (cache.bn_used_batch_stats) {
            mean = lc.h.colwise().mean().transpose();
            MatrixXd centered = lc.h.rowwise() - mean.transpose();
            var = centered.array().square().colwise().mean().matrix().transpose();
            if (options.update_running_stats) {
                layer.bn_running_mean = kBnMomentum * layer.bn_running_mean + (1.0 - kBnMomentum) * mean;
                layer.bn_running_var = kBnMomentum * layer.bn_running_var + (1.0 - kBnMomentum) * var;
            }
            lc.bn_inv_std = (var.array() + kBnEps).rsqrt().matrix();
            lc.bn_xhat = centered * lc.bn_inv_std.asDiagonal();
        } else {
            mean = layer.bn_running_mean;
            var = layer.bn_running_var;
            lc.bn_inv_std = (var.array() + kBnEps).rsqrt().matrix();
            lc.bn_xhat = (lc.h.rowwise() - mean.transpose()) * lc.bn_inv_std.asDiagonal();
        }
        lc.bn_centered_mean = mean;

        MatrixXd y = lc.bn_xhat * layer.bn_gamma.asDiagonal();
        y.rowwise() += layer.bn_beta.transpose();

        if (dropout_on) {
            if (options.dropout_masks) {
                const auto& masks = *options.dropout_masks;
                if (masks.size() != static_cast<std::size_t>(config.n_layers) ||
                    masks[static_cast<std::size_t>(l)].rows() != rows ||
                    masks[static_cast<std::size_t>(l)].cols() != h)
                    throw ContractError("fixed dropout masks do not match the model/batch shape");
                lc.dropout_mask = masks[static_cast<std::size_t>(l)];
            } else {
                lc.dropout_mask = sample_dropout_mask(rows, h, config.dropout_rate, *options.rng);
            }
            y = y.cwiseProduct(lc.dropout_mask);
        }
        lc.y = std::move(y);
        x = &lc.y;
    }

    cache.logits = cache.layers.back().y * model.head.w;
    cache.logits.rowwise() += model.head.b.transpose();
    check_finite(cache.logits, config.n_layers, t_len - 1);
    return cache;
}

double loss(const MatrixXd& logits, const std::vector<int>& targets, const LstmModel& model,
            double l2_lambda) {
    const auto rows = logits.rows();
    if (static_cast<Eigen::Index>(targets.size()) != rows)
        throw ContractError("target count does not match logit rows");
    double data = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const int target = targets[static_cast<std::size_t>(r)];
        if (target < 0 || target >= logits.cols())
            throw ContractError("target class " + std::to_string(target) + " out of range");
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        data += lse - logits(r, target);
    }
    data /= static_cast<double>(rows);

    double penalty = 0.0;
    if (l2_lambda > 0.0) {
        for (const auto& layer : model.layers) penalty += layer.w.squaredNorm();
        penalty += model.head.w.squaredNorm();
        penalty *= l2_lambda;
    }
    return data + penalty;
}

Gradients backward(const LstmModel& model, const ForwardCache& cache,
                   const std::vector<int>& targets) {
    const ModelConfig& config = model.config;
    if (!cache.training) throw ContractError("backward needs a training-mode forward cache");
    if (cache.layers.size() != static_cast<std::size_t>(config.n_layers))
        throw ContractError("cache does not match the model's layer count");
    const Eigen::Index rows = cache.logits.rows();
    if (static_cast<Eigen::Index>(targets.size()) != rows)
        throw ContractError("target count does not match cache rows");

    const int b = cache.b;
    const int t_len = cache.t;
    const int h = config.hidden_size;
    const double n = static_cast<double>(rows);
    Gradients grads = zero_like(model);

    // d(mean CE)/d(logits) = (softmax - onehot)/N.
    MatrixXd dlogits = softmax_rows(cache.logits);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const int target = targets[static_cast<std::size_t>(r)];
        if (target < 0 || target >= dlogits.cols())
            throw ContractError("target class " + std::to_string(target) + " out of range");
        dlogits(r, target) -= 1.0;
    }
    dlogits /= n;

    const MatrixXd& head_in = cache.layers.back().y;
    grads.head_w = head_in.transpose() * dlogits;
    grads.head_b = dlogits.colwise().sum().transpose();
    MatrixXd dy = dlogits * model.head.w.transpose();

    for (int l = config.n_layers - 1; l >= 0; --l) {
        const LstmLayer& layer = model.layers[static_cast<std::size_t>(l)];
        const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
        LayerGrads& lg = grads.layers[static_cast<std::size_t>(l)];
        const int in = layer_input_size(config, l);

        if (lc.dropout_mask.size() > 0) dy = dy.cwiseProduct(lc.dropout_mask);

        lg.bn_gamma = dy.cwiseProduct(lc.bn_xhat).colwise().sum().transpose();
        lg.bn_beta = dy.colwise().sum().transpose();

        MatrixXd dxhat = dy * layer.bn_gamma.asDiagonal();
        MatrixXd dh_raw(rows, h);
        if (cache.bn_used_batch_stats) {
            // Fused batch-stats backward:
            // dx_j = inv_std_j/N * (N*dxhat_j - sum(dxhat_j) - xhat_j * sum(dxhat_j*xhat_j))
            for (int j = 0; j < h; ++j) {
                const double sum_dxhat = dxhat.col(j).sum();
                const double sum_dxhat_xhat = dxhat.col(j).dot(lc.bn_xhat.col(j));
                dh_raw.col(j) = (n * dxhat.col(j).array() - sum_dxhat -
                                 lc.bn_xhat.col(j).array() * sum_dxhat_xhat) *
                                (lc.bn_inv_std(j) / n);
            }
        } else {
            dh_raw = dxhat * lc.bn_inv_std.asDiagonal();
        }

        MatrixXd dz_all(rows, 4 * h);
        MatrixXd dh_next = MatrixXd::Zero(b, h);
        MatrixXd dc_next = MatrixXd::Zero(b, h);
        for (int t = t_len - 1; t >= 0; --t) {
            const Eigen::Index r0 = static_cast<Eigen::Index>(t) * b;
            const auto gi = lc.gate_i.middleRows(r0, b).array();
            const auto gf = lc.gate_f.middleRows(r0, b).array();
            const auto gg = lc.gate_g.middleRows(r0, b).array();
            const auto go = lc.gate_o.middleRows(r0, b).array();
            const auto tc = lc.tanh_c.middleRows(r0, b).array();

            const MatrixXd dh = dh_raw.middleRows(r0, b) + dh_next;
            const MatrixXd dc =
                (dh.array() * go * (1.0 - tc.square())).matrix() + dc_next;

            auto dz = dz_all.middleRows(r0, b);
            dz.leftCols(h) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
            if (t > 0) {
                const auto c_prev = lc.c.middleRows(r0 - b, b).array();
                dz.middleCols(h, h) = (dc.array() * c_prev * gf * (1.0 - gf)).matrix();
            } else {
                dz.middleCols(h, h).setZero();  // c_{-1} = 0
            }
            dz.middleCols(2 * h, h) = (dc.array() * gi * (1.0 - gg.square())).matrix();
            dz.rightCols(h) = (dh.array() * tc * go * (1.0 - go)).matrix();

            dc_next = (dc.array() * gf).matrix();
            dh_next = dz * layer.w.bottomRows(h).transpose();
        }

        lg.w.topRows(in) = lc.x.transpose() * dz_all;
        if (t_len > 1) {
            const Eigen::Index shifted = static_cast<Eigen::Index>(t_len - 1) * b;
            lg.w.bottomRows(h) = lc.h.topRows(shifted).transpose() * dz_all.bottomRows(shifted);
        }
        lg.b = dz_all.colwise().sum().transpose();
        if (config.l2_lambda > 0.0) lg.w += 2.0 * config.l2_lambda * layer.w;

        if (l > 0) dy = dz_all * layer.w.topRows(in).transpose();
    }
    if (config.l2_lambda > 0.0) grads.head_w += 2.0 * config.l2_lambda * model.head.w;
    return grads;
}

void adam_step(LstmModel& model, const Gradients& grads) {
    const ModelConfig& c = model.config;
    model.adam_step_count += 1;
    const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(model.adam_step_count));
    const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(model.adam_step_count));

    auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
        if (!g.allFinite()) throw NumericError("non-finite gradient in adam step");
        m = c.adam_beta1 * m + (1.0 - c.adam_beta1) * g;
        v = c.adam_beta2 * v + (1.0 - c.adam_beta2) * g.cwiseProduct(g);
        theta.array() -=
            c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.adam_eps);
    };

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        update(model.layers[l].w, grads.layers[l].w, model.adam_m.layers[l].w,
               model.adam_v.layers[l].w);
        update(model.layers[l].b, grads.layers[l].b, model.adam_m.layers[l].b,
               model.adam_v.layers[l].b);
        update(model.layers[l].bn_gamma, grads.layers[l].bn_gamma, model.adam_m.layers[l].bn_gamma,
               model.adam_v.layers[l].bn_gamma);
        update(model.layers[l].bn_beta, grads.layers[l].bn_beta, model.adam_m.layers[l].bn_beta,
               model.adam_v.layers[l].bn_beta);
    }
    update(model.head.w, grads.head_w, model.adam_m.head_w, model.adam_v.head_w);
    update(model.head.b, grads.head_b, model.adam_m.head_b, model.adam_v.head_b);
}

double global_grad_norm(const Gradients& grads) {
    double sq = 0.0;
    for (const auto& l : grads.layers)
        sq += l.w.squaredNorm() + l.b.squaredNorm() + l.bn_gamma.squaredNorm() +
              l.bn_beta.squaredNorm();
    sq += grads.head_w.squaredNorm() + grads.head_b.squaredNorm();
    return std::sqrt(sq);
}

void scale_grads(Gradients& grads, double factor) {
    for (auto& l : grads.layers) {
        l.w *= factor;
        l.b *= factor;
        l.bn_gamma *= factor;
        l.bn_beta *= factor;
    }
    grads.head_w *= factor;
    grads.head_b *= factor;
}

std::vector<double> train(LstmModel& model, const std::vector<Window>& windows) {
    const ModelConfig& config = model.config;
    if (windows.empty()) throw ContractError("training needs at least one window");
    Rng rng(sub_seed(config.seed, "train"));

    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
            std::vector<const Window*> chunk;
            for (std::size_t i = at; i < std::min(order.size(), at + static_cast<std::size_t>(config.batch_size)); ++i)
                chunk.push_back(&windows[order[i]]);
            Batch batch = make_batch(chunk, true);

            ForwardOptions options;
            options.training = true;
            options.rng = &rng;
            ForwardCache cache;
            try {
                cache = forward(model, batch, options);
                epoch_loss += loss(cache.logits, batch.targets, model, config.l2_lambda);
                Gradients grads = backward(model, cache, batch.targets);
                if (config.clip_gradients) {
                    const double norm = global_grad_norm(grads);
                    if (norm > config.clip_norm) scale_grads(grads, config.clip_norm / norm);
                }
                adam_step(model, grads);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ": " + e.what());
            }
            ++batches;
        }
        trace.push_back(epoch_loss / std::max(1, batches));
        log::debug("train: epoch ", epoch, " mean loss ", trace.back());
    }
    return trace;
}

MatrixXd softmax_rows(const MatrixXd& logits) {
    MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp().matrix();
        out.row(r) = e / e.sum();
    }
    return out;
}

PredictionSet predict(LstmModel& model, const std::vector<KeyedWindow>& windows) {
    PredictionSet set;
    const auto chunk_size = static_cast<std::size_t>(model.config.batch_size);
    for (std::size_t at = 0; at < windows.size(); at += chunk_size) {
        const std::size_t end = std::min(windows.size(), at + chunk_size);
        std::vector<const Window*> chunk;
        for (std::size_t i = at; i < end; ++i) chunk.push_back(&windows[i].window);
        Batch batch = make_batch(chunk, false);
        ForwardOptions options;  // inference: running stats, no dropout
        ForwardCache cache = forward(model, batch, options);
        MatrixXd probs = softmax_rows(cache.logits);

        for (std::size_t i = at; i < end; ++i) {
            const auto b = static_cast<Eigen::Index>(i - at);
            SequencePrediction pred;
            pred.probs.resize(kWindowLen);
            pred.labels.resize(kWindowLen);
            for (std::size_t t = 0; t < kWindowLen; ++t) {
                const Eigen::Index row = static_cast<Eigen::Index>(t) * batch.b + b;
                for (int c = 0; c < 3; ++c)
                    pred.probs[t][static_cast<std::size_t>(c)] = probs(row, c);
                pred.labels[t] = argmax_label(pred.probs[t]);
            }
            if (!set.entries.emplace(windows[i].key, std::move(pred)).second)
                throw ContractError("duplicate prediction key " + to_string(windows[i].key));
        }
    }
    return set;
}

void save_model(const LstmModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write("PDMC0001", 8);
    const ModelConfig& c = model.config;
    write_i64(out, c.n_layers);
    write_i64(out, c.hidden_size);
    write_i64(out, c.input_size);
    write_i64(out, c.n_classes);
    write_f64(out, c.dropout_rate);
    write_f64(out, c.l2_lambda);
    write_f64(out, c.learning_rate);
    write_f64(out, c.adam_beta1);
    write_f64(out, c.adam_beta2);
    write_f64(out, c.adam_eps);
    write_i64(out, c.batch_size);
    write_i64(out, c.epochs);
    write_u64(out, c.seed);
    write_i64(out, c.clip_gradients ? 1 : 0);
    write_f64(out, c.clip_norm);
    write_i64(out, model.adam_step_count);

    auto write_grads = [&](const Gradients& g) {
        for (const auto& l : g.layers) {
            write_matrix(out, l.w);
            write_vector(out, l.b);
            write_vector(out, l.bn_gamma);
            write_vector(out, l.bn_beta);
        }
        write_matrix(out, g.head_w);
        write_vector(out, g.head_b);
    };
    for (const auto& l : model.layers) {
        write_matrix(out, l.w);
        write_vector(out, l.b);
        write_vector(out, l.bn_gamma);
        write_vector(out, l.bn_beta);
        write_vector(out, l.bn_running_mean);
        write_vector(out, l.bn_running_var);
    }
    write_matrix(out, model.head.w);
    write_vector(out, model.head.b);
    write_grads(model.adam_m);
    write_grads(model.adam_v);
    out.flush();
    if (!out) throw IoError("write to " + path + " failed");
}

LstmModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    char magic[8];
    read_bytes(in, magic, 8);
    if (std::memcmp(magic, "PDMC0001", 8) != 0)
        throw SchemaError(path + " is not a model checkpoint (bad magic)");

    LstmModel model;
    ModelConfig& c = model.config;
    c.n_layers = static_cast<int>(read_i64(in));
    c.hidden_size = static_cast<int>(read_i64(in));
    c.input_size = static_cast<int>(read_i64(in));
    c.n_classes = static_cast<int>(read_i64(in));
    c.dropout_rate = read_f64(in);
    c.l2_lambda = read_f64(in);
    c.learning_rate = read_f64(in);
    c.adam_beta1 = read_f64(in);
    c.adam_beta2 = read_f64(in);
    c.adam_eps = read_f64(in);
    c.batch_size = static_cast<int>(read_i64(in));
    c.epochs = static_cast<int>(read_i64(in));
    c.seed = read_u64(in);
    c.clip_gradients = read_i64(in) != 0;
    c.clip_norm = read_f64(in);
    c.validate();
    model.adam_step_count = read_i64(in);

    auto check_layer_shape = [&](const LstmLayer& l, int idx) {
        const int in_size = layer_input_size(c, idx);
        if (l.w.rows() != in_size + c.hidden_size || l.w.cols() != 4 * c.hidden_size ||
            l.b.size() != 4 * c.hidden_size || l.bn_gamma.size() != c.hidden_size ||
            l.bn_beta.size() != c.hidden_size || l.bn_running_mean.size() != c.hidden_size ||
            l.bn_running_var.size() != c.hidden_size)
            throw SchemaError(path + ": layer " + std::to_string(idx) +
                              " tensors do not match the checkpoint config");
    };
    for (int l = 0; l < c.n_layers; ++l) {
        LstmLayer layer;
        layer.w = read_matrix(in);
        layer.b = read_vector(in);
        layer.bn_gamma = read_vector(in);
        layer.bn_beta = read_vector(in);
        layer.bn_running_mean = read_vector(in);
        layer.bn_running_var = read_vector(in);
        if (layer.bn_running_var.minCoeff() < 0.0)
            throw SchemaError(path + ": negative running variance");
        check_layer_shape(layer, l);
        model.layers.push_back(std::move(layer));
    }
    model.head.w = read_matrix(in);
    model.head.b = read_vector(in);
    if (model.head.w.rows() != c.hidden_size || model.head.w.cols() != c.n_classes ||
        model.head.b.size() != c.n_classes)
        throw SchemaError(path + ": head tensors do not match the checkpoint config");

    auto read_grads = [&]() {
        Gradients g;
        for (int l = 0; l < c.n_layers; ++l) {
            LayerGrads lg;
            lg.w = read_matrix(in);
            lg.b = read_vector(in);
            lg.bn_gamma = read_vector(in);
            lg.bn_beta = read_vector(in);
            g.layers.push_back(std::move(lg));
        }
        g.head_w = read_matrix(in);
        g.head_b = read_vector(in);
        return g;
    };
    model.adam_m = read_grads();
    model.adam_v = read_grads();
    return model;
}

}  // namespace pdm::nn
