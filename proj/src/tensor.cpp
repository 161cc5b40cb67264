#include "tensor.hpp"

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dmcodec {

namespace {
thread_local bool t_grad_enabled = true;
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

static std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DomainError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return n;
}

Tensor Tensor::zeros(Shape shape) {
    const auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double v) {
    const auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(new_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double v) { return Tensor(new_node({}, {v})); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    auto n = new_node(std::move(shape), std::move(values));
    n->requires_grad = true;
    return Tensor(std::move(n));
}

int64_t Tensor::dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw DomainError("tensor: dim index out of range");
    return node_->shape[static_cast<size_t>(i)];
}

double Tensor::item() const {
    if (numel() != 1) throw DomainError("tensor: item() on shape " + shape_str(shape()));
    return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(new_node(node_->shape, node_->value)); }

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) throw DomainError("backward: loss must be a scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
    // Interior gradients are not needed after the sweep.
    for (Node* n : order) {
        if (n->backward_fn) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
    auto n = new_node(std::move(shape), std::move(value));
    if (!t_grad_enabled) return Tensor(std::move(n));
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return Tensor(std::move(n));
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward_fn = std::move(backward_fn);
    return Tensor(std::move(n));
}

Tensor& ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    auto [it, ok] = params_.emplace(name, Tensor::parameter(std::move(shape), std::move(init)));
    return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

int64_t ParamStore::total_numel() const {
    int64_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
}

double ParamStore::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (auto& [_, t] : params_) {
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [_, t] : params_) {
            for (double& g : t.grad_buffer()) g *= s;
        }
    }
    return norm;
}

void Adam::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params.all()) {
        auto& g = p.grad_buffer();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.size() != g.size()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        auto& w = p.values();
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
            v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] -= opts_.lr * mh / (std::sqrt(vh) + opts_.eps);
        }
    }
}

std::map<std::string, std::vector<double>> Adam::export_state() const {
    std::map<std::string, std::vector<double>> out;
    out["__t"] = {static_cast<double>(t_), opts_.lr};
    for (const auto& [name, m] : m_) out["m/" + name] = m;
    for (const auto& [name, v] : v_) out["v/" + name] = v;
    return out;
}

void Adam::import_state(const std::map<std::string, std::vector<double>>& state) {
    m_.clear();
    v_.clear();
    for (const auto& [key, vals] : state) {
        if (key == "__t") {
            if (vals.size() != 2) throw DataError("adam: malformed step record");
            t_ = static_cast<int64_t>(vals[0]);
            opts_.lr = vals[1];
        } else if (key.rfind("m/", 0) == 0) {
            m_[key.substr(2)] = vals;
        } else if (key.rfind("v/", 0) == 0) {
            v_[key.substr(2)] = vals;
        }
    }
}

} // namespace dmcodec
