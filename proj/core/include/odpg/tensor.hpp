#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "odpg/errors.hpp"
#include "odpg/rng.hpp"

namespace odpg {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thread-local autodiff switch; disable around pure inference to skip
// graph construction.
class GradMode {
  public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
  public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <typename T>
class TensorT;

template <typename T>
struct NodeT {
    const char* op = "";
    std::vector<TensorT<T>> inputs;
    std::function<void(const T* grad_out)> backward;
};

template <typename T>
struct TensorImplT {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::shared_ptr<NodeT<T>> node;
};

// Dense row-major tensor handle with reverse-mode autodiff. Copying a
// TensorT copies the handle, not the buffer; clone() deep-copies.
template <typename T>
class TensorT {
  public:
    using Scalar = T;

    TensorT() = default;
    explicit TensorT(Shape shape, bool requires_grad = false);

    static TensorT zeros(Shape shape);
    static TensorT ones(Shape shape);
    static TensorT full(Shape shape, T value);
    static TensorT from_data(Shape shape, std::vector<T> values);
    static TensorT randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0);
    static TensorT uniform(Shape shape, Rng& rng, double lo, double hi);
    static TensorT scalar(T value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim() const { return static_cast<int>(impl_->shape.size()); }
    int size(int axis) const;
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    template <typename... Ix>
    T& at(Ix... idx) {
        return impl_->data[flat_index({static_cast<int>(idx)...})];
    }
    template <typename... Ix>
    const T& at(Ix... idx) const {
        return impl_->data[flat_index({static_cast<int>(idx)...})];
    }

    // Value of a single-element tensor.
    T item() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool on);

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Grad buffer, allocated (zeroed) on first use. The handle is shared,
    // so gradient state is reachable through const handles too.
    T* grad_data() const;
    const std::vector<T>& grad_vec() const { return impl_->grad; }
    std::vector<T>& grad_vec_mut() const;
    void zero_grad() const;
    // Grad as a detached tensor (zeros if never populated).
    TensorT grad_tensor() const;

    // Deep copy without any graph attachment.
    TensorT clone() const;
    // Same values, no graph, no requires_grad.
    TensorT detach() const;

    void fill(T value);
    bool all_finite() const;

    std::shared_ptr<TensorImplT<T>>& impl() { return impl_; }
    const std::shared_ptr<TensorImplT<T>>& impl() const { return impl_; }

  private:
    std::int64_t flat_index(std::initializer_list<int> idx) const;

    std::shared_ptr<TensorImplT<T>> impl_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Records an autodiff node on `out` when grad mode is on and any input
// requires grad. `backward` receives the output grad buffer and must
// accumulate (+=) into the inputs' grad buffers.
template <typename T>
void attach_node(TensorT<T>& out, std::vector<TensorT<T>> inputs,
                 std::function<void(const T*)> backward, const char* op);

// Reverse-mode sweep from a scalar loss. Gradients accumulate across
// repeated calls; callers reset via zero_grad().
template <typename T>
void backward(const TensorT<T>& loss);

// Per-parameter Adam with bias correction. Gradients are left untouched
// by step(); the caller resets them.
template <typename T>
class AdamT {
  public:
    struct Hyper {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamT() = default;
    AdamT(std::vector<std::pair<std::string, TensorT<T>>> params, Hyper hyper);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_count_; }
    const Hyper& hyper() const { return hyper_; }
    std::size_t size() const { return params_.size(); }
    const std::string& name(std::size_t i) const { return params_[i].first; }
    const std::vector<T>& moment1(std::size_t i) const { return m_[i]; }
    const std::vector<T>& moment2(std::size_t i) const { return v_[i]; }
    std::vector<T>& moment1_mut(std::size_t i) { return m_[i]; }
    std::vector<T>& moment2_mut(std::size_t i) { return v_[i]; }
    void set_step_count(std::int64_t t) { step_count_ = t; }

  private:
    std::vector<std::pair<std::string, TensorT<T>>> params_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::int64_t step_count_ = 0;
    Hyper hyper_;
};

using Adam = AdamT<float>;

}  // namespace odpg
