#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 arrays.
//
// A Tensor is a shared handle to a graph node. Operations that touch a tensor
// requiring gradients record a backward closure on their result; calling
// backward() on a scalar walks the recorded graph in reverse topological
// order and accumulates into every reachable node's grad buffer.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dmcodec {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    Shape shape;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);
    // Leaf that accumulates gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t dim(int i) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::vector<double>& grad_buffer() { return node_->ensure_grad(); }
    double item() const;
    double at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    // Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    void backward() const;
    void zero_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Creates the result node of an operation. The backward closure is kept only
// when grad mode is on and at least one input requires gradients.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

// Named trainable parameters, ordered by name so iteration (and therefore
// checkpoint layout and optimizer state) is deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, Shape shape, std::vector<double> init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, Tensor>& all() { return params_; }
    const std::map<std::string, Tensor>& all() const { return params_; }
    size_t size() const { return params_.size(); }
    int64_t total_numel() const;

    void zero_grad();
    // Rescales all gradients so their global L2 norm is at most max_norm;
    // returns the norm before clipping.
    double clip_grad_norm(double max_norm);

private:
    std::map<std::string, Tensor> params_;
};

// Adam with bias correction. State is keyed by parameter name.
class Adam {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    explicit Adam(Options opts) : opts_(opts) {}

    void step(ParamStore& params);
    double lr() const { return opts_.lr; }
    void set_lr(double lr) { opts_.lr = lr; }
    int64_t steps() const { return t_; }

    // Flattened state for checkpointing.
    std::map<std::string, std::vector<double>> export_state() const;
    void import_state(const std::map<std::string, std::vector<double>>& state);

private:
    Options opts_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

} // namespace dmcodec
