#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pdm/predictions.hpp"
#include "pdm/rng.hpp"
#include "pdm/types.hpp"

namespace pdm::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ModelConfig {
    int n_layers = 2;
    // Desk-scale default; the original challenge entry used 400. Larger
    // widths are a config knob, not a code change.
    int hidden_size = 32;
    int input_size = 0;
    int n_classes = 3;
    double dropout_rate = 0.5;
    double l2_lambda = 0.0002;
    double learning_rate = 0.001;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    int epochs = 30;
    std::uint64_t seed = 0;
    bool clip_gradients = false;
    double clip_norm = 5.0;

    void validate() const;  // throws ConfigError
};

// One stacked layer. Gate weights pack into a single (in+hidden)×4*hidden
// matrix, columns ordered [input | forget | candidate | output]; the top
// block multiplies x_t, the bottom block h_{t-1}. Batch norm runs per hidden
// feature over the combined batch×time axis, after the layer's output.
struct LstmLayer {
    MatrixXd w;  // (in+hidden) × 4*hidden
    VectorXd b;  // 4*hidden
    VectorXd bn_gamma, bn_beta;        // hidden
    VectorXd bn_running_mean;          // hidden
    VectorXd bn_running_var;           // hidden, entries >= 0

    int input_size() const { return static_cast<int>(w.rows()) - hidden_size(); }
    int hidden_size() const { return static_cast<int>(w.cols()) / 4; }
};

struct HeadLayer {
    MatrixXd w;  // hidden × n_classes
    VectorXd b;  // n_classes
};

// Gradient (or Adam moment) storage, shape-aligned with the trainable
// parameters: layer w/b/gamma/beta plus head w/b. Running stats are not
// trained and have no slot here.
struct LayerGrads {
    MatrixXd w;
    VectorXd b, bn_gamma, bn_beta;
};

struct Gradients {
    std::vector<LayerGrads> layers;
    MatrixXd head_w;
    VectorXd head_b;
};

struct LstmModel {
    ModelConfig config;
    std::vector<LstmLayer> layers;
    HeadLayer head;
    Gradients adam_m, adam_v;
    std::int64_t adam_step_count = 0;
};

LstmModel init(const ModelConfig& config);
Gradients zero_like(const LstmModel& model);

// Visits every trainable parameter (or its gradient slot) in one fixed
// order, so an index into one enumeration addresses the same scalar in the
// other. Used by the finite-difference gradient check.
std::size_t param_count(const LstmModel& model);
void for_each_param(LstmModel& model, const std::function<void(double&)>& fn);
void for_each_grad(const Gradients& grads, const std::function<void(double)>& fn);

// A batch laid out time-major: row t*B + b of `x` is window b at timestep t,
// so each timestep occupies one contiguous block of B rows.
struct Batch {
    MatrixXd x;                // (B*T) × F
    std::vector<int> targets;  // B*T class indices, empty when unlabeled
    int b = 0;
    int t = 0;
};

Batch make_batch(const std::vector<const Window*>& windows, bool with_targets);

struct ForwardOptions {
    bool training = false;
    // Freeze batch norm to running statistics even in training mode. The
    // finite-difference oracle and the batch-duplication invariance check
    // need batch-independent normalization.
    bool bn_use_running = false;
    bool update_running_stats = true;
    Rng* rng = nullptr;  // required when training with dropout_rate > 0
    // Optional externally fixed dropout masks, one (B*T)×hidden matrix per
    // layer with entries 0 or 1/(1-p); overrides rng sampling.
    const std::vector<MatrixXd>* dropout_masks = nullptr;
};

// Everything backward() needs, stacked over time like Batch::x.
struct LayerCache {
    MatrixXd x;                    // layer input, (B*T) × in
    MatrixXd gate_i, gate_f, gate_g, gate_o;  // post-activation, (B*T) × H
    MatrixXd c, tanh_c;            // cell state and tanh(c), (B*T) × H
    MatrixXd h;                    // raw LSTM output, (B*T) × H
    MatrixXd bn_xhat;              // normalized pre-scale activations
    VectorXd bn_inv_std;           // 1/sqrt(var + eps), per feature
    VectorXd bn_centered_mean;     // batch mean used by this pass
    MatrixXd dropout_mask;         // empty in inference mode
    MatrixXd y;                    // layer output after bn + dropout
};

struct ForwardCache {
    int b = 0;
    int t = 0;
    bool training = false;
    bool bn_used_batch_stats = false;
    std::vector<LayerCache> layers;
    MatrixXd logits;  // (B*T) × n_classes
};

ForwardCache forward(LstmModel& model, const Batch& batch, const ForwardOptions& options);

// Mean cross-entropy over all B*T positions plus l2_lambda · Σ w² over the
// gate and head weight matrices (biases and batch-norm parameters excluded).
double loss(const MatrixXd& logits, const std::vector<int>& targets, const LstmModel& model,
            double l2_lambda);

Gradients backward(const LstmModel& model, const ForwardCache& cache,
                   const std::vector<int>& targets);

void adam_step(LstmModel& model, const Gradients& grads);

double global_grad_norm(const Gradients& grads);
void scale_grads(Gradients& grads, double factor);

// Seeded shuffle + minibatch Adam loop over the model's configured epochs.
// Returns the mean training loss per epoch.
std::vector<double> train(LstmModel& model, const std::vector<Window>& windows);

MatrixXd softmax_rows(const MatrixXd& logits);

// Inference-mode probabilities and argmax labels per timestep.
PredictionSet predict(LstmModel& model, const std::vector<KeyedWindow>& windows);

void save_model(const LstmModel& model, const std::string& path);
LstmModel load_model(const std::string& path);

}  // namespace pdm::nn
