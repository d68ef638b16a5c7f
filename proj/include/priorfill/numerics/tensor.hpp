#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace priorfill {

// Error taxonomy shared by every module.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedSizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DType { f32, f64 };

const char* dtype_name(DType dt);
DType dtype_from_name(const std::string& name);

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Process-wide default for newly created tensors. 32-bit unless a
/// `DTypeScope` switches to 64-bit (gradient checking).
DType default_dtype();

class DTypeScope {
   public:
    explicit DTypeScope(DType dt);
    ~DTypeScope();
    DTypeScope(const DTypeScope&) = delete;
    DTypeScope& operator=(const DTypeScope&) = delete;

   private:
    DType prev_;
};

/// Graph recording switch. Ops record a backward node only when grad mode is
/// enabled and at least one input requires grad.
bool grad_enabled();

class GradModeGuard {
   public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

   private:
    bool prev_;
};

struct NoGradGuard : GradModeGuard {
    NoGradGuard() : GradModeGuard(false) {}
};

struct Storage {
    std::variant<std::vector<float>, std::vector<double>> buf;
};

class Tensor;
struct GradFn;

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    std::shared_ptr<Storage> storage;
    bool requires_grad = false;
    std::shared_ptr<TensorImpl> grad;
    std::shared_ptr<GradFn> grad_fn;
};

/// Reference-counted handle to a dense row-major array. Copies share data;
/// use `clone()` for a deep copy.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor empty(const Shape& shape, DType dt = default_dtype());
    static Tensor zeros(const Shape& shape, DType dt = default_dtype());
    static Tensor ones(const Shape& shape, DType dt = default_dtype());
    static Tensor full(const Shape& shape, double value, DType dt = default_dtype());
    static Tensor scalar(double value, DType dt = default_dtype());
    static Tensor from_vector(std::span<const double> values, const Shape& shape,
                              DType dt = default_dtype());
    static Tensor from_vector(std::initializer_list<double> values, const Shape& shape,
                              DType dt = default_dtype());

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    /// Extent of axis `i`; negative indices count from the back.
    int64_t dim(int i) const;
    int64_t numel() const;
    DType dtype() const;

    template <class T>
    T* data();
    template <class T>
    const T* data() const;

    double item() const;
    double at(int64_t flat) const;
    void set(int64_t flat, double v);
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool rg);
    Tensor grad() const;
    void zero_grad();
    /// Adds `g` into the gradient slot (no graph recording).
    void accumulate_grad(const Tensor& g);

    const std::shared_ptr<GradFn>& grad_fn() const;
    bool is_leaf() const { return grad_fn() == nullptr; }

    /// Same storage, no history.
    Tensor detach() const;
    Tensor clone() const;
    /// Copies values from `src` (same shape) into this tensor's storage.
    void copy_from(const Tensor& src);
    Tensor to(DType dt) const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

   private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Backward closure: receives the output gradient and a mask of which inputs
/// need a gradient; returns one gradient per input (undefined when skipped).
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

struct GradFn {
    std::string name;
    std::vector<Tensor> inputs;
    BackwardFn fn;
};

/// Records `fn` as the producer of `out` when any input requires grad and
/// grad mode is on. Returns `out` for chaining. Also the hook for
/// user-defined differentiable functions.
Tensor attach_grad_fn(Tensor out, std::vector<Tensor> inputs, std::string name, BackwardFn fn);

/// Guard for backward closures written with raw kernels: throws when a
/// higher-order graph would have to be built through them.
void require_first_order(const char* op, const Tensor& grad_out,
                         std::initializer_list<const Tensor*> saved = {});

/// Reverse-mode sweep from a scalar `loss`; leaf gradients accumulate.
void backward(const Tensor& loss, bool create_graph = false);

/// Gradients of scalar `out` with respect to `inputs`, without touching
/// any `.grad()` slot. With `create_graph` the results are differentiable.
std::vector<Tensor> grad(const Tensor& out, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
    if (dt == DType::f32) return f.template operator()<float>();
    return f.template operator()<double>();
}

}  // namespace priorfill
