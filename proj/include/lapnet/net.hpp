#pragma once

// Feed-forward networks over flat parameter vectors, with exact reverse-mode
// gradients and Jacobian/Hessian products in parameter space.
//
// Conventions:
//  * Inputs and outputs are batched row-wise: an N x d matrix holds N points.
//  * A dense layer computes z = W a + b + offset with W stored row-major
//    (out x in); `offset` is a constant shift that is not a parameter.
//  * mse is 1/2 * ||f - y||^2 per datum, so its output Hessian is the identity.
//    Evidence and posterior code rely on this convention.
//  * relu'(0) is taken to be 0.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lapnet/types.hpp"

namespace lapnet {

// ---------------------------------------------------------------------------
// Tensors and parameter trees

struct Tensor {
  std::vector<Index> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<Index> shape, std::vector<double> data);
  static Tensor zeros(std::vector<Index> shape);
  static Tensor scalar(double value);

  Index size() const { return static_cast<Index>(data.size()); }
};

/// Ordered tree of named tensors. Leaves are visited depth-first in insertion
/// order, which fixes the flat coordinate layout.
class ParamTree {
 public:
  struct Node {
    std::string name;
    std::optional<Tensor> leaf;
    std::vector<Node> children;
  };

  ParamTree& add(std::string name, Tensor leaf);
  ParamTree& add(std::string name, ParamTree subtree);

  const std::vector<Node>& nodes() const { return nodes_; }

  /// Total number of scalars P.
  Index size() const;

  /// Leaf by '/'-separated path, e.g. "dense_1/bias".
  const Tensor& at(const std::string& path) const;

  /// '/'-separated leaf paths in flattening order.
  std::vector<std::string> leaf_paths() const;

  bool operator==(const ParamTree& other) const;

 private:
  friend ParamTree unflatten(const FlatVector& v, const ParamTree& templ);
  std::vector<Node> nodes_;
};

FlatVector flatten(const ParamTree& params);
ParamTree unflatten(const FlatVector& v, const ParamTree& templ);

// ---------------------------------------------------------------------------
// Models

enum class ActivationKind { relu, tanh };

struct DenseLayer {
  Index in = 0;
  Index out = 0;
  bool with_bias = true;
  double offset = 0.0;
};

struct ActivationLayer {
  ActivationKind kind = ActivationKind::tanh;
};

using Layer = std::variant<DenseLayer, ActivationLayer>;

struct ModelSpec {
  std::vector<Layer> layers;
  Index input_dim = 0;
  Index output_dim = 0;

  /// Throws DimensionError naming the first incompatible layer.
  void validate() const;
  Index param_count() const;

  /// input -> hidden[0] -> act -> ... -> hidden[k-1] -> act -> output.
  static ModelSpec mlp(Index input_dim, const std::vector<Index>& hidden,
                       Index output_dim, ActivationKind act);
};

/// Zero-valued parameter tree with one subtree "dense_<i>" per dense layer.
ParamTree param_template(const ModelSpec& model);

/// Glorot-uniform weights and zero biases from a seeded generator.
ParamTree init_params(const ModelSpec& model, std::uint64_t seed);

/// Flat index range [begin, end) of the last dense layer's parameters.
std::pair<Index, Index> last_layer_range(const ModelSpec& model);

std::string to_string(ActivationKind kind);
ActivationKind activation_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Losses and data

enum class LossKind { mse, cross_entropy };

struct LossSpec {
  LossKind kind = LossKind::mse;
};

std::string to_string(LossKind kind);
LossKind loss_from_string(const std::string& name);

/// N inputs with N targets. Cross-entropy targets are either an N x 1 column of
/// class indices or an N x C one-hot matrix.
struct Batch {
  Matrix inputs;
  Matrix targets;

  Index size() const { return inputs.rows(); }
  void validate() const;
};

/// Loss of one output row against one target row.
double loss_value(const LossSpec& loss, const Vector& output,
                  const Vector& target);

/// Gradient of the per-datum loss with respect to the output.
Vector loss_output_grad(const LossSpec& loss, const Vector& output,
                        const Vector& target);

/// Hessian of the per-datum loss with respect to the output:
/// identity for mse, diag(p) - p p^T for cross-entropy.
Matrix loss_output_hessian(const LossSpec& loss, const Vector& output);

Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

// ---------------------------------------------------------------------------
// Evaluation and differentiation on flat parameters

/// Per-layer inputs of a forward pass, kept for the backward sweeps.
struct ForwardCache {
  std::vector<Matrix> layer_inputs;
  Matrix output;
};

ForwardCache forward_cache(const ModelSpec& model, const FlatVector& theta,
                           const Matrix& inputs);

Matrix forward(const ModelSpec& model, const FlatVector& theta,
               const Matrix& inputs);
Vector forward(const ModelSpec& model, const FlatVector& theta,
               const Vector& x);
Matrix forward(const ModelSpec& model, const ParamTree& params,
               const Matrix& inputs);

/// Summed per-datum loss over a batch.
double total_loss(const ModelSpec& model, const FlatVector& theta,
                  const Batch& batch, const LossSpec& loss);

/// Gradient of the summed per-datum loss.
FlatVector grad(const ModelSpec& model, const FlatVector& theta,
                const Batch& batch, const LossSpec& loss);

/// Output tangents J_n v for every row of `inputs` (N x C).
Matrix jvp(const ModelSpec& model, const FlatVector& theta,
           const Matrix& inputs, const FlatVector& v);
Vector jvp(const ModelSpec& model, const FlatVector& theta, const Vector& x,
           const FlatVector& v);

/// sum_n J_n^T u_n for an N x C cotangent matrix.
FlatVector vjp(const ModelSpec& model, const FlatVector& theta,
               const Matrix& inputs, const Matrix& cotangents);
FlatVector vjp(const ModelSpec& model, const FlatVector& theta,
               const Vector& x, const Vector& u);

/// C x P Jacobian at a single input, assembled from C vjp rows.
Matrix jacobian(const ModelSpec& model, const FlatVector& theta,
                const Vector& x);

/// Stacked Jacobian of all outputs at all inputs, (N*C) x P, row n*C + c.
Matrix jacobian(const ModelSpec& model, const FlatVector& theta,
                const Matrix& inputs);

/// Cached-forward variants used by the curvature operators.
Matrix jvp(const ModelSpec& model, const FlatVector& theta,
           const ForwardCache& cache, const FlatVector& v);
FlatVector vjp(const ModelSpec& model, const FlatVector& theta,
               const ForwardCache& cache, const Matrix& cotangents);

/// Hessian-vector product of the summed loss, computed as the directional
/// derivative of the reverse-mode gradient along v.
FlatVector hvp(const ModelSpec& model, const FlatVector& theta,
               const ForwardCache& cache, const Matrix& targets,
               const LossSpec& loss, const FlatVector& v);

}  // namespace lapnet
