#include "odpg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace odpg {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

template <typename T>
TensorT<T>::TensorT(Shape shape, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImplT<T>>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), T(0));
    impl_->requires_grad = requires_grad;
}

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape) {
    return TensorT(std::move(shape));
}

template <typename T>
TensorT<T> TensorT<T>::ones(Shape shape) {
    return full(std::move(shape), T(1));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value) {
    TensorT t(std::move(shape));
    t.fill(value);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(Shape shape, std::vector<T> values) {
    TensorT t(std::move(shape));
    if (values.size() != t.impl_->data.size()) {
        throw DimensionError("from_data: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(t.shape()));
    }
    t.impl_->data = std::move(values);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::randn(Shape shape, Rng& rng, double mean, double stddev) {
    TensorT t(std::move(shape));
    for (auto& x : t.impl_->data) x = static_cast<T>(rng.normal(mean, stddev));
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::uniform(Shape shape, Rng& rng, double lo, double hi) {
    TensorT t(std::move(shape));
    for (auto& x : t.impl_->data) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value) {
    return full({1}, value);
}

template <typename T>
int TensorT<T>::size(int axis) const {
    const int d = dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw DimensionError("size: axis out of range for " + shape_str(shape()));
    return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T TensorT<T>::item() const {
    if (!impl_ || impl_->data.size() != 1) {
        throw DimensionError("item: tensor is not a scalar");
    }
    return impl_->data[0];
}

template <typename T>
void TensorT<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
}

template <typename T>
T* TensorT<T>::grad_data() const {
    return grad_vec_mut().data();
}

template <typename T>
std::vector<T>& TensorT<T>::grad_vec_mut() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
void TensorT<T>::zero_grad() const {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
TensorT<T> TensorT<T>::grad_tensor() const {
    TensorT g(shape());
    if (!impl_->grad.empty()) g.impl_->data = impl_->grad;
    return g;
}

template <typename T>
TensorT<T> TensorT<T>::clone() const {
    TensorT t(shape());
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
    TensorT t(shape());
    t.impl_->data = impl_->data;
    return t;
}

template <typename T>
void TensorT<T>::fill(T value) {
    std::fill(impl_->data.begin(), impl_->data.end(), value);
}

template <typename T>
bool TensorT<T>::all_finite() const {
    for (T x : impl_->data) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

template <typename T>
std::int64_t TensorT<T>::flat_index(std::initializer_list<int> idx) const {
    const auto& shp = impl_->shape;
    if (idx.size() != shp.size()) {
        throw DimensionError("at: expected " + std::to_string(shp.size()) + " indices");
    }
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (int i : idx) {
        if (i < 0 || i >= shp[k]) throw DimensionError("at: index out of bounds");
        flat = flat * shp[k] + i;
        ++k;
    }
    return flat;
}

template <typename T>
void attach_node(TensorT<T>& out, std::vector<TensorT<T>> inputs,
                 std::function<void(const T*)> backward, const char* op) {
    if (!GradMode::enabled()) return;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return;
    auto node = std::make_shared<NodeT<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.set_requires_grad(true);
    out.impl()->node = std::move(node);
}

namespace {

template <typename T>
void topo_visit(const std::shared_ptr<TensorImplT<T>>& root,
                std::vector<std::pair<TensorImplT<T>*, NodeT<T>*>>& order) {
    // Iterative postorder DFS; order ends up inputs-first.
    std::unordered_set<NodeT<T>*> seen;
    struct Frame {
        TensorImplT<T>* impl;
        std::size_t next_child = 0;
    };
    std::vector<Frame> stack;
    if (root->node && seen.insert(root->node.get()).second) stack.push_back({root.get()});
    while (!stack.empty()) {
        Frame& f = stack.back();
        NodeT<T>* node = f.impl->node.get();
        if (f.next_child < node->inputs.size()) {
            auto& child = node->inputs[f.next_child++];
            TensorImplT<T>* ci = child.impl().get();
            if (ci && ci->node && seen.insert(ci->node.get()).second) {
                stack.push_back({ci});
            }
        } else {
            order.emplace_back(f.impl, node);
            stack.pop_back();
        }
    }
}

}  // namespace

template <typename T>
void backward(const TensorT<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ValidationError("backward: loss must be a defined scalar tensor");
    }
    if (!loss.impl()->node) {
        if (!loss.requires_grad()) {
            throw ValidationError("backward: tensor has no autodiff graph (constant input)");
        }
        // A bare leaf: dLoss/dLoss = 1 and there is nothing to propagate.
        loss.grad_vec_mut()[0] += T(1);
        return;
    }
    std::vector<std::pair<TensorImplT<T>*, NodeT<T>*>> order;
    topo_visit(loss.impl(), order);
    // Interior grads are per-sweep scratch; only leaves accumulate across
    // repeated backward() calls.
    for (auto& [impl, node] : order) {
        if (!impl->grad.empty()) std::fill(impl->grad.begin(), impl->grad.end(), T(0));
    }
    loss.grad_vec_mut()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImplT<T>* impl = it->first;
        if (impl->grad.empty()) continue;  // nothing flowed into this value
        it->second->backward(impl->grad.data());
    }
}

template <typename T>
AdamT<T>::AdamT(std::vector<std::pair<std::string, TensorT<T>>> params, Hyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto n = static_cast<std::size_t>(params_[i].second.numel());
        m_[i].assign(n, T(0));
        v_[i].assign(n, T(0));
    }
}

template <typename T>
void AdamT<T>::step() {
    ++step_count_;
    const double b1 = hyper_.beta1;
    const double b2 = hyper_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].second;
        if (!p.has_grad()) {
            throw ValidationError("adam: parameter '" + params_[i].first + "' has no gradient");
        }
        const T* g = p.grad_vec().data();
        T* x = p.data();
        T* m = m_[i].data();
        T* v = v_[i].data();
        const auto n = static_cast<std::size_t>(p.numel());
        for (std::size_t k = 0; k < n; ++k) {
            const double gk = static_cast<double>(g[k]);
            const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
            const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double mhat = mk / bc1;
            const double vhat = vk / bc2;
            x[k] = static_cast<T>(static_cast<double>(x[k]) -
                                  hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps));
        }
    }
}

template <typename T>
void AdamT<T>::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

template class TensorT<float>;
template class TensorT<double>;
template class AdamT<float>;
template class AdamT<double>;
template void attach_node<float>(TensorT<float>&, std::vector<TensorT<float>>,
                                 std::function<void(const float*)>, const char*);
template void attach_node<double>(TensorT<double>&, std::vector<TensorT<double>>,
                                  std::function<void(const double*)>, const char*);
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

}  // namespace odpg
