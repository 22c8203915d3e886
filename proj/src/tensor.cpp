#include "tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tlra {

void fail(const std::string& msg) { throw std::runtime_error(msg); }
void fail_usage(const std::string& msg) { throw std::invalid_argument(msg); }

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

static void check_shape(const Shape& shape) {
    for (int64_t d : shape)
        if (d <= 0) fail_usage("tensor axis length must be positive, got shape " + shape_str(shape));
}

Tensor::Tensor() : shape_{}, data_(1, 0.0f) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<size_t>(numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (numel(shape_) != static_cast<int64_t>(data_.size()))
        fail_usage("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(float v) {
    Tensor t;
    t.data_[0] = v;
    return t;
}

Tensor Tensor::full(Shape shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

int64_t Tensor::dim(int axis) const {
    int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) fail_usage("axis out of range for rank " + std::to_string(r));
    return shape_[static_cast<size_t>(axis)];
}

std::vector<int64_t> Tensor::strides() const {
    std::vector<int64_t> s(shape_.size());
    int64_t acc = 1;
    for (int i = rank() - 1; i >= 0; --i) {
        s[static_cast<size_t>(i)] = acc;
        acc *= shape_[static_cast<size_t>(i)];
    }
    return s;
}

float Tensor::at(std::span<const int64_t> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

float& Tensor::at(std::span<const int64_t> idx) {
    if (static_cast<int>(idx.size()) != rank()) fail_usage("index rank mismatch");
    int64_t off = 0, acc = 1;
    for (int i = rank() - 1; i >= 0; --i) {
        off += idx[static_cast<size_t>(i)] * acc;
        acc *= shape_[static_cast<size_t>(i)];
    }
    return data_[static_cast<size_t>(off)];
}

float Tensor::item() const {
    if (size() != 1) fail_usage("item() requires a single-element tensor, got " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshape(Shape new_shape) const {
    if (numel(new_shape) != size())
        fail_usage("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) + " changes element count");
    return Tensor(std::move(new_shape), data_);
}

Tensor Tensor::permute(std::span<const int> perm) const {
    int r = rank();
    if (static_cast<int>(perm.size()) != r) fail_usage("permute rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        int p = perm[static_cast<size_t>(i)];
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) fail_usage("permute is not a permutation");
        seen[static_cast<size_t>(p)] = true;
        out_shape[static_cast<size_t>(i)] = shape_[static_cast<size_t>(p)];
    }
    Tensor out(out_shape);
    if (r == 0) {
        out.data_[0] = data_[0];
        return out;
    }
    auto in_strides = strides();
    std::vector<int64_t> out_stride_of_in(static_cast<size_t>(r));
    auto out_strides = out.strides();
    for (int i = 0; i < r; ++i) out_stride_of_in[static_cast<size_t>(perm[static_cast<size_t>(i)])] = out_strides[static_cast<size_t>(i)];
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t out_off = 0;
    for (int64_t flat = 0; flat < size(); ++flat) {
        out.data_[static_cast<size_t>(out_off)] = data_[static_cast<size_t>(flat)];
        for (int i = r - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)]++;
            out_off += out_stride_of_in[static_cast<size_t>(i)];
            if (idx[static_cast<size_t>(i)] < shape_[static_cast<size_t>(i)]) break;
            out_off -= out_stride_of_in[static_cast<size_t>(i)] * shape_[static_cast<size_t>(i)];
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

Tensor Tensor::transpose(int a, int b) const {
    int r = rank();
    if (a < 0) a += r;
    if (b < 0) b += r;
    std::vector<int> perm(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(a)], perm[static_cast<size_t>(b)]);
    return permute(perm);
}

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

float Tensor::max_abs() const {
    float m = 0.0f;
    for (float v : data_) m = std::max(m, std::fabs(v));
    return m;
}

std::string Tensor::str(int max_elems) const {
    std::ostringstream os;
    os << shape_str(shape_) << '[';
    int64_t n = std::min<int64_t>(size(), max_elems);
    for (int64_t i = 0; i < n; ++i) os << (i ? "," : "") << data_[static_cast<size_t>(i)];
    if (n < size()) os << ",...";
    os << ']';
    return os.str();
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        fail_usage(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i] * c);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

Tensor permute_axis(const Tensor& x, int axis, std::span<const int64_t> perm) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) fail_usage("permute_axis: axis out of range");
    int64_t n = x.shape()[static_cast<size_t>(axis)];
    if (static_cast<int64_t>(perm.size()) != n) fail_usage("permute_axis: permutation length mismatch");
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int64_t p : perm) {
        if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) fail_usage("permute_axis: not a permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<size_t>(i)];
    Tensor out(x.shape());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < n; ++i) {
            const float* src = x.data() + (o * n + i) * inner;
            float* dst = out.data() + (o * n + perm[static_cast<size_t>(i)]) * inner;
            std::memcpy(dst, src, static_cast<size_t>(inner) * sizeof(float));
        }
    return out;
}

// --- Rng ---------------------------------------------------------------

Rng::Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) fail_usage("uniform_int: n must be positive");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v;
    do { v = next_u64(); } while (v >= limit);
    return static_cast<int64_t>(v % un);
}

static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng Rng::split(std::string_view label) const {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return Rng(splitmix64(seed_ ^ splitmix64(h)));
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(normal() * stddev);
    return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(uniform(lo, hi));
    return t;
}

std::vector<int64_t> Rng::sample_indices(int64_t n, int64_t r) {
    if (r < 0 || r > n) fail_usage("sample_indices: need 0 <= r <= n");
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates, then sort so r == n is the identity selection
    for (int64_t i = 0; i < r; ++i) {
        int64_t j = i + uniform_int(n - i);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(r));
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace tlra
