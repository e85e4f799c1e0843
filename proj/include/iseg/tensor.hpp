#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace iseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

// Storage precision. f32 keeps the flat buffer in doubles but rounds every
// stored value to float precision; f64 is the default for training and all
// gradient checks.
enum class Dtype { f64, f32 };

class Tape;

// Dense n-d array of doubles with optional gradient tracking. Copying a
// Tensor copies a handle; the underlying buffer is shared and treated as
// immutable once an op has produced it. Leaves (parameters) are mutated only
// between training steps, never while a tape holds nodes referring to them.
class Tensor {
  public:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        Dtype dtype = Dtype::f64;
        bool requires_grad = false;
        std::vector<double> grad;  // allocated lazily on first accumulation
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false, Dtype dtype = Dtype::f64);
    static Tensor full(Shape shape, double value, bool requires_grad = false, Dtype dtype = Dtype::f64);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false,
                            Dtype dtype = Dtype::f64);
    static Tensor scalar(double value, bool requires_grad = false, Dtype dtype = Dtype::f64);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
    std::int64_t dim(std::int64_t i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
    Dtype dtype() const { return impl_->dtype; }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    const std::vector<double>& data() const { return impl_->data; }
    // For leaf initialization and optimizer updates only.
    std::vector<double>& mutable_data() { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_buffer();  // allocates zeros on first use
    void zero_grad();
    void drop_grad() { impl_->grad.clear(); }  // next step starts without a buffer

    double item() const;
    double at(const std::vector<std::int64_t>& idx) const;
    std::int64_t flat_index(const std::vector<std::int64_t>& idx) const;

    const std::shared_ptr<Impl>& impl() const { return impl_; }

  private:
    std::shared_ptr<Impl> impl_;
};

// Records the backward rules of one forward pass in execution order. A single
// reverse sweep populates grads of every requires_grad leaf reachable from the
// loss. Confined to one thread; install with TapeScope.
class Tape {
  public:
    using BackwardFn = std::function<void()>;

    void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Seeds d(loss)/d(loss)=1 and runs every recorded rule in reverse order.
    void backward(const Tensor& loss);

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

    static Tape* active();

  private:
    friend class TapeScope;
    std::vector<BackwardFn> nodes_;
    bool consumed_ = false;
};

class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// Suspends recording for its lifetime (value-only computation inside a
// taped region, e.g. matching costs).
class NoTapeScope {
  public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

  private:
    Tape* prev_;
};

// Deterministic RNG: mt19937_64 with hand-rolled conversions so that streams
// are identical across standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0,1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Inclusive range, rejection sampled so the stream is bias-free.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        check(lo <= hi, "uniform_int: empty range");
        std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % range);
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable stream splitting for per-scene / per-shard seeds.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace iseg
