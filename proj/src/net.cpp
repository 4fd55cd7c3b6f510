#include "lapnet/net.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "lapnet/errors.hpp"

namespace lapnet {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightMap = Eigen::Map<const RowMajorMatrix>;
using MutWeightMap = Eigen::Map<RowMajorMatrix>;

Index product(const std::vector<Index>& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         std::multiplies<>());
}

std::string describe(const Layer& layer, std::size_t index) {
  std::ostringstream os;
  os << "layer " << index << " (";
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    os << "dense " << d->in << "->" << d->out;
  } else {
    os << to_string(std::get<ActivationLayer>(layer).kind);
  }
  os << ")";
  return os.str();
}

Index dense_param_count(const DenseLayer& d) {
  return d.in * d.out + (d.with_bias ? d.out : 0);
}

Matrix activate(ActivationKind kind, const Matrix& z) {
  if (kind == ActivationKind::tanh) return z.array().tanh().matrix();
  return z.array().max(0.0).matrix();
}

Matrix activation_derivative(ActivationKind kind, const Matrix& z) {
  if (kind == ActivationKind::tanh) {
    return (1.0 - z.array().tanh().square()).matrix();
  }
  return (z.array() > 0.0).cast<double>().matrix();
}

Matrix activation_second_derivative(ActivationKind kind, const Matrix& z) {
  if (kind == ActivationKind::tanh) {
    const Eigen::ArrayXXd t = z.array().tanh();
    return (-2.0 * t * (1.0 - t.square())).matrix();
  }
  return Matrix::Zero(z.rows(), z.cols());
}

void check_theta(const ModelSpec& model, const FlatVector& theta) {
  if (theta.size() != model.param_count()) {
    std::ostringstream os;
    os << "parameter vector has length " << theta.size() << ", model expects "
       << model.param_count();
    throw DimensionError(os.str());
  }
}

void check_inputs(const ModelSpec& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim) {
    std::ostringstream os;
    os << "input has " << inputs.cols() << " columns but "
       << describe(model.layers.front(), 0) << " expects " << model.input_dim;
    throw DimensionError(os.str());
  }
}


Vector one_hot_target(const Vector& target, Index classes) {
  if (target.size() == classes) return target;
  if (target.size() != 1) {
    throw DimensionError("cross_entropy target must be a class index or a " +
                         std::to_string(classes) + "-vector");
  }
  const double c = target(0);
  if (!(c >= 0.0) || c >= static_cast<double>(classes) || c != std::floor(c)) {
    std::ostringstream os;
    os << "class index " << c << " outside [0, " << classes << ")";
    throw DomainError(os.str());
  }
  Vector hot = Vector::Zero(classes);
  hot(static_cast<Index>(c)) = 1.0;
  return hot;
}

// Output-space gradient of the loss for every row.
Matrix output_grads(const LossSpec& loss, const Matrix& outputs,
                    const Matrix& targets) {
  Matrix g(outputs.rows(), outputs.cols());
  for (Index n = 0; n < outputs.rows(); ++n) {
    g.row(n) = loss_output_grad(loss, outputs.row(n).transpose(),
                                targets.row(n).transpose())
                   .transpose();
  }
  return g;
}

// Output-space Hessian of the loss applied row-wise to tangents.
Matrix output_hessian_times(const LossSpec& loss, const Matrix& outputs,
                            const Matrix& tangents) {
  if (loss.kind == LossKind::mse) return tangents;
  Matrix r(tangents.rows(), tangents.cols());
  for (Index n = 0; n < outputs.rows(); ++n) {
    const Vector p = softmax(outputs.row(n).transpose());
    const Vector t = tangents.row(n).transpose();
    r.row(n) = (p.cwiseProduct(t) - p * p.dot(t)).transpose();
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor / ParamTree

Tensor::Tensor(std::vector<Index> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (product(shape) != static_cast<Index>(data.size())) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match its shape");
  }
}

Tensor Tensor::zeros(std::vector<Index> shape) {
  const Index n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

ParamTree& ParamTree::add(std::string name, Tensor leaf) {
  for (const auto& n : nodes_) {
    if (n.name == name) throw DomainError("duplicate parameter name: " + name);
  }
  nodes_.push_back(Node{std::move(name), std::move(leaf), {}});
  return *this;
}

ParamTree& ParamTree::add(std::string name, ParamTree subtree) {
  for (const auto& n : nodes_) {
    if (n.name == name) throw DomainError("duplicate parameter name: " + name);
  }
  nodes_.push_back(Node{std::move(name), std::nullopt, std::move(subtree.nodes_)});
  return *this;
}

namespace {

Index node_size(const ParamTree::Node& node) {
  if (node.leaf) return node.leaf->size();
  Index total = 0;
  for (const auto& c : node.children) total += node_size(c);
  return total;
}

void collect_paths(const ParamTree::Node& node, const std::string& prefix,
                   std::vector<std::string>& out) {
  const std::string path = prefix.empty() ? node.name : prefix + "/" + node.name;
  if (node.leaf) {
    out.push_back(path);
    return;
  }
  for (const auto& c : node.children) collect_paths(c, path, out);
}

void flatten_into(const ParamTree::Node& node, FlatVector& v, Index& pos) {
  if (node.leaf) {
    for (double x : node.leaf->data) v(pos++) = x;
    return;
  }
  for (const auto& c : node.children) flatten_into(c, v, pos);
}

void fill_from(ParamTree::Node& node, const FlatVector& v, Index& pos) {
  if (node.leaf) {
    for (double& x : node.leaf->data) x = v(pos++);
    return;
  }
  for (auto& c : node.children) fill_from(c, v, pos);
}

bool nodes_equal(const ParamTree::Node& a, const ParamTree::Node& b) {
  if (a.name != b.name || a.leaf.has_value() != b.leaf.has_value()) return false;
  if (a.leaf) return a.leaf->shape == b.leaf->shape && a.leaf->data == b.leaf->data;
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!nodes_equal(a.children[i], b.children[i])) return false;
  }
  return true;
}

}  // namespace

Index ParamTree::size() const {
  Index total = 0;
  for (const auto& n : nodes_) total += node_size(n);
  return total;
}

const Tensor& ParamTree::at(const std::string& path) const {
  const std::vector<Node>* level = &nodes_;
  std::size_t start = 0;
  while (true) {
    const std::size_t slash = path.find('/', start);
    const std::string part = path.substr(start, slash - start);
    const Node* found = nullptr;
    for (const auto& n : *level) {
      if (n.name == part) found = &n;
    }
    if (!found) throw DomainError("no parameter at path: " + path);
    if (slash == std::string::npos) {
      if (!found->leaf) throw DomainError("path is not a leaf: " + path);
      return *found->leaf;
    }
    level = &found->children;
    start = slash + 1;
  }
}

std::vector<std::string> ParamTree::leaf_paths() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) collect_paths(n, "", out);
  return out;
}

bool ParamTree::operator==(const ParamTree& other) const {
  if (nodes_.size() != other.nodes_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_equal(nodes_[i], other.nodes_[i])) return false;
  }
  return true;
}

FlatVector flatten(const ParamTree& params) {
  FlatVector v(params.size());
  Index pos = 0;
  for (const auto& n : params.nodes()) flatten_into(n, v, pos);
  return v;
}

ParamTree unflatten(const FlatVector& v, const ParamTree& templ) {
  if (v.size() != templ.size()) {
    throw DimensionError("cannot unflatten a vector of length " +
                         std::to_string(v.size()) + " into a tree of size " +
                         std::to_string(templ.size()));
  }
  ParamTree out = templ;
  Index pos = 0;
  for (auto& n : out.nodes_) fill_from(n, v, pos);
  return out;
}

// ---------------------------------------------------------------------------
// ModelSpec

std::string to_string(ActivationKind kind) {
  return kind == ActivationKind::tanh ? "tanh" : "relu";
}

ActivationKind activation_from_string(const std::string& name) {
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "relu") return ActivationKind::relu;
  throw DomainError("unknown activation: " + name);
}

std::string to_string(LossKind kind) {
  return kind == LossKind::mse ? "mse" : "cross_entropy";
}

LossKind loss_from_string(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "cross_entropy") return LossKind::cross_entropy;
  throw DomainError("unknown loss: " + name);
}

void ModelSpec::validate() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  Index width = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseLayer>(&layers[i])) {
      if (d->in != width || d->out < 1) {
        std::ostringstream os;
        os << describe(layers[i], i) << " expects input width " << d->in
           << " but receives " << width;
        throw DimensionError(os.str());
      }
      width = d->out;
    }
  }
  if (!std::holds_alternative<DenseLayer>(layers.back())) {
    throw DimensionError("last layer must be dense");
  }
  if (width != output_dim) {
    throw DimensionError("model output width " + std::to_string(width) +
                         " does not match output_dim " +
                         std::to_string(output_dim));
  }
}

Index ModelSpec::param_count() const {
  Index p = 0;
  for (const auto& l : layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l)) p += dense_param_count(*d);
  }
  return p;
}

ModelSpec ModelSpec::mlp(Index input_dim, const std::vector<Index>& hidden,
                         Index output_dim, ActivationKind act) {
  ModelSpec m;
  m.input_dim = input_dim;
  m.output_dim = output_dim;
  Index width = input_dim;
  for (Index h : hidden) {
    m.layers.emplace_back(DenseLayer{width, h, true, 0.0});
    m.layers.emplace_back(ActivationLayer{act});
    width = h;
  }
  m.layers.emplace_back(DenseLayer{width, output_dim, true, 0.0});
  m.validate();
  return m;
}

ParamTree param_template(const ModelSpec& model) {
  model.validate();
  ParamTree tree;
  int k = 0;
  for (const auto& l : model.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      ParamTree layer;
      layer.add("weight", Tensor::zeros({d->out, d->in}));
      if (d->with_bias) layer.add("bias", Tensor::zeros({d->out}));
      tree.add("dense_" + std::to_string(k++), std::move(layer));
    }
  }
  return tree;
}

ParamTree init_params(const ModelSpec& model, std::uint64_t seed) {
  const ParamTree templ = param_template(model);
  std::mt19937_64 rng(seed);
  FlatVector theta = FlatVector::Zero(model.param_count());
  Index off = 0;
  for (const auto& l : model.layers) {
    const auto* d = std::get_if<DenseLayer>(&l);
    if (!d) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(d->in + d->out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Index i = 0; i < d->in * d->out; ++i) theta(off + i) = u(rng);
    off += dense_param_count(*d);
  }
  return unflatten(theta, templ);
}

std::pair<Index, Index> last_layer_range(const ModelSpec& model) {
  Index off = 0;
  std::pair<Index, Index> range{0, 0};
  for (const auto& l : model.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      range = {off, off + dense_param_count(*d)};
      off += dense_param_count(*d);
    }
  }
  return range;
}

// ---------------------------------------------------------------------------
// Losses

void Batch::validate() const {
  if (inputs.rows() < 1) throw DomainError("batch is empty");
  if (inputs.rows() != targets.rows()) {
    throw DimensionError("batch inputs have " + std::to_string(inputs.rows()) +
                         " rows but targets have " +
                         std::to_string(targets.rows()));
  }
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

double loss_value(const LossSpec& loss, const Vector& output,
                  const Vector& target) {
  if (loss.kind == LossKind::mse) {
    if (output.size() != target.size()) {
      throw DimensionError("mse output and target sizes differ");
    }
    return 0.5 * (output - target).squaredNorm();
  }
  const Vector y = one_hot_target(target, output.size());
  return -y.dot(log_softmax(output));
}

Vector loss_output_grad(const LossSpec& loss, const Vector& output,
                        const Vector& target) {
  if (loss.kind == LossKind::mse) {
    if (output.size() != target.size()) {
      throw DimensionError("mse output and target sizes differ");
    }
    return output - target;
  }
  const Vector y = one_hot_target(target, output.size());
  return softmax(output) * y.sum() - y;
}

Matrix loss_output_hessian(const LossSpec& loss, const Vector& output) {
  if (loss.kind == LossKind::mse) {
    return Matrix::Identity(output.size(), output.size());
  }
  const Vector p = softmax(output);
  Matrix h = -p * p.transpose();
  h.diagonal() += p;
  return h;
}

// ---------------------------------------------------------------------------
// Forward and differentiation

ForwardCache forward_cache(const ModelSpec& model, const FlatVector& theta,
                           const Matrix& inputs) {
  check_theta(model, theta);
  check_inputs(model, inputs);
  ForwardCache cache;
  cache.layer_inputs.reserve(model.layers.size());
  Matrix a = inputs;
  Index off = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    cache.layer_inputs.push_back(a);
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      if (a.cols() != d->in) {
        throw DimensionError(describe(layer, i) + " receives width " +
                             std::to_string(a.cols()));
      }
      const WeightMap w(theta.data() + off, d->out, d->in);
      Matrix z = a * w.transpose();
      if (d->with_bias) {
        const Eigen::Map<const Vector> b(theta.data() + off + d->in * d->out,
                                         d->out);
        z.rowwise() += b.transpose();
      }
      if (d->offset != 0.0) z.array() += d->offset;
      a = std::move(z);
      off += dense_param_count(*d);
    } else {
      a = activate(std::get<ActivationLayer>(layer).kind, a);
    }
  }
  cache.output = std::move(a);
  return cache;
}

Matrix forward(const ModelSpec& model, const FlatVector& theta,
               const Matrix& inputs) {
  return forward_cache(model, theta, inputs).output;
}

Vector forward(const ModelSpec& model, const FlatVector& theta,
               const Vector& x) {
  return forward(model, theta, Matrix(x.transpose())).row(0).transpose();
}

Matrix forward(const ModelSpec& model, const ParamTree& params,
               const Matrix& inputs) {
  return forward(model, flatten(params), inputs);
}

double total_loss(const ModelSpec& model, const FlatVector& theta,
                  const Batch& batch, const LossSpec& loss) {
  batch.validate();
  const Matrix out = forward(model, theta, batch.inputs);
  double total = 0.0;
  for (Index n = 0; n < out.rows(); ++n) {
    total += loss_value(loss, out.row(n).transpose(),
                        batch.targets.row(n).transpose());
  }
  return total;
}

Matrix jvp(const ModelSpec& model, const FlatVector& theta,
           const ForwardCache& cache, const FlatVector& v) {
  check_theta(model, v);
  const Index n = cache.output.rows();
  Matrix t;  // empty until the first dense layer
  Index off = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    const Matrix& a = cache.layer_inputs[i];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const WeightMap w(theta.data() + off, d->out, d->in);
      const WeightMap dw(v.data() + off, d->out, d->in);
      Matrix tz = a * dw.transpose();
      if (t.size() > 0) tz.noalias() += t * w.transpose();
      if (d->with_bias) {
        const Eigen::Map<const Vector> db(v.data() + off + d->in * d->out,
                                          d->out);
        tz.rowwise() += db.transpose();
      }
      t = std::move(tz);
      off += dense_param_count(*d);
    } else if (t.size() > 0) {
      t = t.cwiseProduct(
          activation_derivative(std::get<ActivationLayer>(layer).kind, a));
    }
  }
  if (t.size() == 0) t = Matrix::Zero(n, model.output_dim);
  return t;
}

FlatVector vjp(const ModelSpec& model, const FlatVector& theta,
               const ForwardCache& cache, const Matrix& cotangents) {
  if (cotangents.rows() != cache.output.rows() ||
      cotangents.cols() != cache.output.cols()) {
    throw DimensionError("cotangent shape does not match the model output");
  }
  FlatVector g = FlatVector::Zero(theta.size());
  Matrix gz = cotangents;
  Index off = model.param_count();
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    const Layer& layer = model.layers[k];
    const Matrix& a = cache.layer_inputs[k];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      off -= dense_param_count(*d);
      MutWeightMap gw(g.data() + off, d->out, d->in);
      gw.noalias() = gz.transpose() * a;
      if (d->with_bias) {
        Eigen::Map<Vector>(g.data() + off + d->in * d->out, d->out) =
            gz.colwise().sum().transpose();
      }
      if (k > 0) {
        const WeightMap w(theta.data() + off, d->out, d->in);
        gz = gz * w;
      }
    } else {
      gz = gz.cwiseProduct(
          activation_derivative(std::get<ActivationLayer>(layer).kind, a));
    }
  }
  return g;
}

Matrix jvp(const ModelSpec& model, const FlatVector& theta,
           const Matrix& inputs, const FlatVector& v) {
  return jvp(model, theta, forward_cache(model, theta, inputs), v);
}

Vector jvp(const ModelSpec& model, const FlatVector& theta, const Vector& x,
           const FlatVector& v) {
  return jvp(model, theta, Matrix(x.transpose()), v).row(0).transpose();
}

FlatVector vjp(const ModelSpec& model, const FlatVector& theta,
               const Matrix& inputs, const Matrix& cotangents) {
  return vjp(model, theta, forward_cache(model, theta, inputs), cotangents);
}

FlatVector vjp(const ModelSpec& model, const FlatVector& theta,
               const Vector& x, const Vector& u) {
  return vjp(model, theta, Matrix(x.transpose()), Matrix(u.transpose()));
}

FlatVector grad(const ModelSpec& model, const FlatVector& theta,
                const Batch& batch, const LossSpec& loss) {
  batch.validate();
  const ForwardCache cache = forward_cache(model, theta, batch.inputs);
  return vjp(model, theta, cache,
             output_grads(loss, cache.output, batch.targets));
}

Matrix jacobian(const ModelSpec& model, const FlatVector& theta,
                const Vector& x) {
  const ForwardCache cache = forward_cache(model, theta, Matrix(x.transpose()));
  Matrix j(model.output_dim, model.param_count());
  for (Index c = 0; c < model.output_dim; ++c) {
    Matrix u = Matrix::Zero(1, model.output_dim);
    u(0, c) = 1.0;
    j.row(c) = vjp(model, theta, cache, u).transpose();
  }
  return j;
}

Matrix jacobian(const ModelSpec& model, const FlatVector& theta,
                const Matrix& inputs) {
  const Index c_dim = model.output_dim;
  Matrix j(inputs.rows() * c_dim, model.param_count());
  for (Index n = 0; n < inputs.rows(); ++n) {
    j.middleRows(n * c_dim, c_dim) =
        jacobian(model, theta, Vector(inputs.row(n).transpose()));
  }
  return j;
}

FlatVector hvp(const ModelSpec& model, const FlatVector& theta,
               const ForwardCache& cache, const Matrix& targets,
               const LossSpec& loss, const FlatVector& v) {
  check_theta(model, v);
  const Index n = cache.output.rows();
  const std::size_t layers = model.layers.size();

  // Forward tangents of every layer input.
  std::vector<Matrix> tangents(layers);
  Matrix t = Matrix::Zero(n, model.input_dim);
  Index off = 0;
  for (std::size_t i = 0; i < layers; ++i) {
    tangents[i] = t;
    const Layer& layer = model.layers[i];
    const Matrix& a = cache.layer_inputs[i];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const WeightMap w(theta.data() + off, d->out, d->in);
      const WeightMap dw(v.data() + off, d->out, d->in);
      Matrix tz = t * w.transpose() + a * dw.transpose();
      if (d->with_bias) {
        const Eigen::Map<const Vector> db(v.data() + off + d->in * d->out,
                                          d->out);
        tz.rowwise() += db.transpose();
      }
      t = std::move(tz);
      off += dense_param_count(*d);
    } else {
      t = t.cwiseProduct(
          activation_derivative(std::get<ActivationLayer>(layer).kind, a));
    }
  }

  // Reverse sweep carrying the cotangent and its directional derivative.
  Matrix g = output_grads(loss, cache.output, targets);
  Matrix g_dot = output_hessian_times(loss, cache.output, t);
  FlatVector h = FlatVector::Zero(theta.size());
  off = model.param_count();
  for (std::size_t k = layers; k-- > 0;) {
    const Layer& layer = model.layers[k];
    const Matrix& a = cache.layer_inputs[k];
    const Matrix& ta = tangents[k];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      off -= dense_param_count(*d);
      MutWeightMap hw(h.data() + off, d->out, d->in);
      hw.noalias() = g_dot.transpose() * a + g.transpose() * ta;
      if (d->with_bias) {
        Eigen::Map<Vector>(h.data() + off + d->in * d->out, d->out) =
            g_dot.colwise().sum().transpose();
      }
      if (k > 0) {
        const WeightMap w(theta.data() + off, d->out, d->in);
        const WeightMap dw(v.data() + off, d->out, d->in);
        Matrix next_dot = g_dot * w + g * dw;
        g = g * w;
        g_dot = std::move(next_dot);
      }
    } else {
      const ActivationKind kind = std::get<ActivationLayer>(layer).kind;
      const Matrix d1 = activation_derivative(kind, a);
      const Matrix d2 = activation_second_derivative(kind, a);
      g_dot = g_dot.cwiseProduct(d1) +
              d2.cwiseProduct(ta).cwiseProduct(g);
      g = g.cwiseProduct(d1);
    }
  }
  return h;
}

}  // namespace lapnet
