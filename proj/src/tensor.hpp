#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tlra {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of 32-bit floats. Rank 0 is a scalar; zero-length
// axes are rejected. All operations that change layout materialize a copy.
class Tensor {
public:
    Tensor();                                   // scalar 0
    explicit Tensor(Shape shape);               // zeros
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, float v);

    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    const Shape& shape() const { return shape_; }
    int64_t dim(int axis) const;                // negative axes allowed

    const float* data() const { return data_.data(); }
    float* data() { return data_.data(); }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    float at(std::span<const int64_t> idx) const;
    float& at(std::span<const int64_t> idx);
    float item() const;                         // requires size()==1

    std::vector<int64_t> strides() const;       // row-major element strides

    Tensor reshape(Shape new_shape) const;
    Tensor permute(std::span<const int> perm) const;
    Tensor transpose(int a, int b) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    float max_abs() const;

    std::string str(int max_elems = 64) const;  // debug formatting

private:
    Shape shape_;
    std::vector<float> data_;
};

// Elementwise helpers used across modules; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Moves slice i of `axis` to position perm[i] in the result.
Tensor permute_axis(const Tensor& x, int axis, std::span<const int64_t> perm);

// Deterministic seeded random stream. mt19937_64 keeps the raw draws
// bit-identical across platforms; the float/int transforms are hand-rolled
// because std::*_distribution is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t seed() const { return seed_; }
    uint64_t next_u64();
    double uniform();                    // [0, 1)
    double uniform(double lo, double hi);
    double normal();                     // N(0, 1), Box-Muller
    int64_t uniform_int(int64_t n);      // [0, n), unbiased

    Rng split(std::string_view label) const;  // independent child stream

    Tensor normal_tensor(Shape shape, double stddev = 1.0);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }

    // r distinct indices from [0, n), returned sorted (r == n is the identity
    // selection regardless of the stream state consumed).
    std::vector<int64_t> sample_indices(int64_t n, int64_t r);

private:
    uint64_t seed_;
    std::mt19937_64 engine_;             // the engine itself is fully specified
    bool has_spare_ = false;
    double spare_ = 0.0;
};

[[noreturn]] void fail(const std::string& msg);       // throws std::runtime_error
[[noreturn]] void fail_usage(const std::string& msg); // throws std::invalid_argument

}  // namespace tlra
