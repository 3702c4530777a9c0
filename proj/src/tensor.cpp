#include "tssm/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

namespace tssm {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void validate_shape(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw Error("tensor: dimension sizes must be positive, got " + shape_str(shape));
    }
}

void check_finite(const char* kind, std::span<const float> values) {
    for (float v : values) {
        if (!std::isfinite(v)) throw Error(std::string(kind) + ": non-finite result");
    }
}

std::vector<float> copy_of(const Tensor& t) {
    return std::vector<float>(t.data().begin(), t.data().end());
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
    validate_shape(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(static_cast<std::size_t>(shape_numel(t.shape_)), 0.0f);
    return t;
}

Tensor Tensor::full(Shape shape, float value) {
    validate_shape(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(static_cast<std::size_t>(shape_numel(t.shape_)), value);
    check_finite("full", t.data_);
    return t;
}

Tensor Tensor::scalar(float value) {
    return full({}, value);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw Error("tensor: data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
    }
    check_finite("from_data", data);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

float Tensor::item() const {
    if (rank() != 0) throw Error("item: tensor is not rank-0, shape " + shape_str(shape_));
    return data_[0];
}

float Tensor::at(std::initializer_list<int> index) const {
    if (static_cast<int>(index.size()) != rank()) {
        throw Error("at: index rank mismatch for shape " + shape_str(shape_));
    }
    std::int64_t flat = 0;
    int axis = 0;
    for (int i : index) {
        if (i < 0 || i >= shape_[axis]) throw Error("at: index out of range");
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return data_[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::leaf(const Tensor& t) {
    if (t.tracked()) throw Error("leaf: tensor is already tracked");
    Tensor out = t;
    out.tape_ = this;
    out.id_ = next_id_++;
    leaves_.emplace_back(out.id_, out.shape());
    return out;
}

void Tape::record(const char* kind, std::initializer_list<const Tensor*> inputs,
                  Tensor& out, BackwardFn back) {
    Entry e;
    e.kind = kind;
    e.back = std::move(back);
    for (const Tensor* t : inputs) {
        if (t->tracked() && t->tape() != this) {
            throw Error(std::string(kind) + ": operands belong to different records");
        }
        e.inputs.push_back(t->id());
        e.input_numels.push_back(t->numel());
    }
    out.tape_ = this;
    out.id_ = next_id_++;
    e.out = out.id_;
    entries_.push_back(std::move(e));
}

std::unordered_map<ValueId, Tensor> Tape::backward(const Tensor& loss) const {
    if (loss.tape() != this || !loss.tracked()) {
        throw Error("backward: loss was not produced through this record");
    }
    if (loss.rank() != 0) {
        throw Error("backward: loss must be rank-0, got shape " + shape_str(loss.shape()));
    }

    std::unordered_map<ValueId, std::vector<float>> buffers;
    buffers[loss.id()] = {1.0f};

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        auto found = buffers.find(it->out);
        if (found == buffers.end()) continue;  // loss does not depend on this entry
        const std::vector<float> out_grad = found->second;

        std::vector<float*> in_grads(it->inputs.size(), nullptr);
        for (std::size_t s = 0; s < it->inputs.size(); ++s) {
            ValueId vid = it->inputs[s];
            if (vid == 0) continue;
            auto& buf = buffers[vid];
            if (buf.empty()) buf.assign(static_cast<std::size_t>(it->input_numels[s]), 0.0f);
            in_grads[s] = buf.data();
        }
        it->back(out_grad, in_grads);
    }

    std::unordered_map<ValueId, Tensor> grads;
    for (const auto& [id, shape] : leaves_) {
        auto found = buffers.find(id);
        if (found == buffers.end()) {
            grads.emplace(id, Tensor::zeros(shape));
        } else {
            grads.emplace(id, Tensor::from_data(shape, found->second));
        }
    }
    return grads;
}

std::vector<Tape::EntryView> Tape::entries_view() const {
    std::vector<EntryView> views;
    views.reserve(entries_.size());
    for (const Entry& e : entries_) views.push_back({e.kind, e.out, e.inputs});
    return views;
}

Tape* common_tape(const Tensor& a, const Tensor& b) {
    Tape* ta = a.tracked() ? a.tape() : nullptr;
    Tape* tb = b.tracked() ? b.tape() : nullptr;
    if (ta && tb && ta != tb) throw Error("op: operands belong to different records");
    return ta ? ta : tb;
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

struct BinPlan {
    Shape out_shape;
    bool a_scalar = false;
    bool b_scalar = false;
    std::int64_t n = 0;
};

BinPlan plan_binary(const char* kind, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return {a.shape(), false, false, a.numel()};
    if (a.rank() == 0) return {b.shape(), true, false, b.numel()};
    if (b.rank() == 0) return {a.shape(), false, true, a.numel()};
    throw Error(std::string(kind) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

// Accumulate g into a rank-0 slot (sum over all broadcast positions).
void add_scalar_grad(float* slot, double total) {
    if (slot) slot[0] += static_cast<float>(total);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    BinPlan plan = plan_binary("add", a, b);
    Tensor out = Tensor::zeros(plan.out_shape);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < plan.n; ++i) {
        po[i] = (plan.a_scalar ? pa[0] : pa[i]) + (plan.b_scalar ? pb[0] : pb[i]);
    }
    check_finite("add", out.data());
    if (Tape* tape = common_tape(a, b)) {
        tape->record("add", {&a, &b}, out,
                     [plan](std::span<const float> g, const std::vector<float*>& gin) {
                         if (gin[0]) {
                             if (plan.a_scalar) {
                                 double t = 0;
                                 for (float v : g) t += v;
                                 add_scalar_grad(gin[0], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) gin[0][i] += g[i];
                             }
                         }
                         if (gin[1]) {
                             if (plan.b_scalar) {
                                 double t = 0;
                                 for (float v : g) t += v;
                                 add_scalar_grad(gin[1], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) gin[1][i] += g[i];
                             }
                         }
                     });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BinPlan plan = plan_binary("sub", a, b);
    Tensor out = Tensor::zeros(plan.out_shape);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < plan.n; ++i) {
        po[i] = (plan.a_scalar ? pa[0] : pa[i]) - (plan.b_scalar ? pb[0] : pb[i]);
    }
    check_finite("sub", out.data());
    if (Tape* tape = common_tape(a, b)) {
        tape->record("sub", {&a, &b}, out,
                     [plan](std::span<const float> g, const std::vector<float*>& gin) {
                         if (gin[0]) {
                             if (plan.a_scalar) {
                                 double t = 0;
                                 for (float v : g) t += v;
                                 add_scalar_grad(gin[0], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) gin[0][i] += g[i];
                             }
                         }
                         if (gin[1]) {
                             if (plan.b_scalar) {
                                 double t = 0;
                                 for (float v : g) t += v;
                                 add_scalar_grad(gin[1], -t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) gin[1][i] -= g[i];
                             }
                         }
                     });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BinPlan plan = plan_binary("mul", a, b);
    Tensor out = Tensor::zeros(plan.out_shape);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < plan.n; ++i) {
        po[i] = (plan.a_scalar ? pa[0] : pa[i]) * (plan.b_scalar ? pb[0] : pb[i]);
    }
    check_finite("mul", out.data());
    if (Tape* tape = common_tape(a, b)) {
        tape->record("mul", {&a, &b}, out,
                     [plan, av = copy_of(a), bv = copy_of(b)](std::span<const float> g,
                                                              const std::vector<float*>& gin) {
                         if (gin[0]) {
                             if (plan.a_scalar) {
                                 double t = 0;
                                 for (std::int64_t i = 0; i < plan.n; ++i) t += double(g[i]) * bv[i];
                                 add_scalar_grad(gin[0], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) {
                                     gin[0][i] += g[i] * (plan.b_scalar ? bv[0] : bv[i]);
                                 }
                             }
                         }
                         if (gin[1]) {
                             if (plan.b_scalar) {
                                 double t = 0;
                                 for (std::int64_t i = 0; i < plan.n; ++i) t += double(g[i]) * av[i];
                                 add_scalar_grad(gin[1], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) {
                                     gin[1][i] += g[i] * (plan.a_scalar ? av[0] : av[i]);
                                 }
                             }
                         }
                     });
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    BinPlan plan = plan_binary("div", a, b);
    for (float v : b.data()) {
        if (v == 0.0f) throw Error("div: division by exact zero");
    }
    Tensor out = Tensor::zeros(plan.out_shape);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < plan.n; ++i) {
        po[i] = (plan.a_scalar ? pa[0] : pa[i]) / (plan.b_scalar ? pb[0] : pb[i]);
    }
    check_finite("div", out.data());
    if (Tape* tape = common_tape(a, b)) {
        tape->record("div", {&a, &b}, out,
                     [plan, av = copy_of(a), bv = copy_of(b)](std::span<const float> g,
                                                              const std::vector<float*>& gin) {
                         if (gin[0]) {
                             if (plan.a_scalar) {
                                 double t = 0;
                                 for (std::int64_t i = 0; i < plan.n; ++i) t += double(g[i]) / bv[i];
                                 add_scalar_grad(gin[0], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) {
                                     gin[0][i] += g[i] / (plan.b_scalar ? bv[0] : bv[i]);
                                 }
                             }
                         }
                         if (gin[1]) {
                             if (plan.b_scalar) {
                                 double t = 0;
                                 double b0 = bv[0];
                                 for (std::int64_t i = 0; i < plan.n; ++i) {
                                     double ai = plan.a_scalar ? av[0] : av[i];
                                     t += -double(g[i]) * ai / (b0 * b0);
                                 }
                                 add_scalar_grad(gin[1], t);
                             } else {
                                 for (std::int64_t i = 0; i < plan.n; ++i) {
                                     float ai = plan.a_scalar ? av[0] : av[i];
                                     gin[1][i] += -g[i] * ai / (bv[i] * bv[i]);
                                 }
                             }
                         }
                     });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
    if (a.tracked()) {
        // subgradient 0 at exactly 0
        a.tape()->record("relu", {&a}, out,
                         [av = copy_of(a)](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::size_t i = 0; i < av.size(); ++i) {
                                 if (av[i] > 0.0f) gin[0][i] += g[i];
                             }
                         });
    }
    return out;
}

Tensor square(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pa[i];
    check_finite("square", out.data());
    if (a.tracked()) {
        a.tape()->record("square", {&a}, out,
                         [av = copy_of(a)](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::size_t i = 0; i < av.size(); ++i) {
                                 gin[0][i] += 2.0f * av[i] * g[i];
                             }
                         });
    }
    return out;
}

Tensor sqrt(const Tensor& a) {
    for (float v : a.data()) {
        if (v < 0.0f) throw Error("sqrt: negative input");
    }
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = std::sqrt(pa[i]);
    if (a.tracked()) {
        a.tape()->record("sqrt", {&a}, out,
                         [ov = copy_of(out)](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::size_t i = 0; i < ov.size(); ++i) {
                                 gin[0][i] += 0.5f / ov[i] * g[i];
                             }
                         });
    }
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = std::exp(pa[i]);
    check_finite("exp", out.data());
    if (a.tracked()) {
        a.tape()->record("exp", {&a}, out,
                         [ov = copy_of(out)](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::size_t i = 0; i < ov.size(); ++i) gin[0][i] += ov[i] * g[i];
                         });
    }
    return out;
}

namespace {
float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = stable_sigmoid(pa[i]);
    if (a.tracked()) {
        a.tape()->record("sigmoid", {&a}, out,
                         [ov = copy_of(out)](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::size_t i = 0; i < ov.size(); ++i) {
                                 gin[0][i] += ov[i] * (1.0f - ov[i]) * g[i];
                             }
                         });
    }
    return out;
}

Tensor clamp01(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        po[i] = pa[i] < 0.0f ? 0.0f : (pa[i] > 1.0f ? 1.0f : pa[i]);
    }
    if (a.tracked()) {
        // passes gradient only strictly inside (0, 1)
        a.tape()->record("clamp01", {&a}, out,
                         [av = copy_of(a)](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::size_t i = 0; i < av.size(); ++i) {
                                 if (av[i] > 0.0f && av[i] < 1.0f) gin[0][i] += g[i];
                             }
                         });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul / conv2d

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw Error("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
    }
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw Error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int l = 0; l < k; ++l) acc += double(pa[i * k + l]) * pb[l * n + j];
            po[i * n + j] = static_cast<float>(acc);
        }
    }
    check_finite("matmul", out.data());
    if (Tape* tape = common_tape(a, b)) {
        tape->record("matmul", {&a, &b}, out,
                     [m, k, n, av = copy_of(a), bv = copy_of(b)](std::span<const float> g,
                                                                 const std::vector<float*>& gin) {
                         if (gin[0]) {
                             for (int i = 0; i < m; ++i) {
                                 for (int l = 0; l < k; ++l) {
                                     double acc = 0;
                                     for (int j = 0; j < n; ++j) {
                                         acc += double(g[i * n + j]) * bv[l * n + j];
                                     }
                                     gin[0][i * k + l] += static_cast<float>(acc);
                                 }
                             }
                         }
                         if (gin[1]) {
                             for (int l = 0; l < k; ++l) {
                                 for (int j = 0; j < n; ++j) {
                                     double acc = 0;
                                     for (int i = 0; i < m; ++i) {
                                         acc += double(av[i * k + l]) * g[i * n + j];
                                     }
                                     gin[1][l * n + j] += static_cast<float>(acc);
                                 }
                             }
                         }
                     });
    }
    return out;
}

namespace {

void conv2d_forward(const float* in, const float* ker, double* acc, int h, int w, int k,
                    int c_in, int c_out) {
    const int pad = k / 2;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* out_px = acc + (std::int64_t(y) * w + x) * c_out;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = y + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = x + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const float* in_px = in + (std::int64_t(iy) * w + ix) * c_in;
                    const float* ker_px = ker + (std::int64_t(ky) * k + kx) * c_in * c_out;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const double iv = in_px[ci];
                        const float* kr = ker_px + std::int64_t(ci) * c_out;
                        for (int co = 0; co < c_out; ++co) out_px[co] += iv * kr[co];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel) {
    if (input.rank() != 3) {
        throw Error("conv2d: input must be rank-3 [h,w,c], got " + shape_str(input.shape()));
    }
    if (kernel.rank() != 4 || kernel.shape()[0] != kernel.shape()[1]) {
        throw Error("conv2d: kernel must be [k,k,c_in,c_out], got " + shape_str(kernel.shape()));
    }
    const int h = input.shape()[0], w = input.shape()[1], c_in = input.shape()[2];
    const int k = kernel.shape()[0], c_out = kernel.shape()[3];
    if (k % 2 == 0) throw Error("conv2d: kernel size must be odd, got " + std::to_string(k));
    if (kernel.shape()[2] != c_in) {
        throw Error("conv2d: kernel expects " + std::to_string(kernel.shape()[2]) +
                    " input channels, image has " + std::to_string(c_in));
    }

    std::vector<double> acc(std::size_t(h) * w * c_out, 0.0);
    conv2d_forward(input.data().data(), kernel.data().data(), acc.data(), h, w, k, c_in, c_out);
    Tensor out = Tensor::zeros({h, w, c_out});
    float* po = out.mutable_data().data();
    for (std::size_t i = 0; i < acc.size(); ++i) po[i] = static_cast<float>(acc[i]);
    check_finite("conv2d", out.data());

    if (Tape* tape = common_tape(input, kernel)) {
        tape->record(
            "conv2d", {&input, &kernel}, out,
            [h, w, k, c_in, c_out, in = copy_of(input), ker = copy_of(kernel)](
                std::span<const float> g, const std::vector<float*>& gin) {
                const int pad = k / 2;
                std::vector<double> gi(gin[0] ? in.size() : 0, 0.0);
                std::vector<double> gk(gin[1] ? ker.size() : 0, 0.0);
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        const float* g_px = g.data() + (std::int64_t(y) * w + x) * c_out;
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = y + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = x + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                const std::int64_t in_base = (std::int64_t(iy) * w + ix) * c_in;
                                const std::int64_t ker_base =
                                    (std::int64_t(ky) * k + kx) * c_in * c_out;
                                for (int ci = 0; ci < c_in; ++ci) {
                                    const std::int64_t kb = ker_base + std::int64_t(ci) * c_out;
                                    double gsum = 0;
                                    for (int co = 0; co < c_out; ++co) {
                                        const double gv = g_px[co];
                                        gsum += gv * ker[kb + co];
                                        if (!gk.empty()) gk[kb + co] += double(in[in_base + ci]) * gv;
                                    }
                                    if (!gi.empty()) gi[in_base + ci] += gsum;
                                }
                            }
                        }
                    }
                }
                if (gin[0]) {
                    for (std::size_t i = 0; i < gi.size(); ++i) gin[0][i] += static_cast<float>(gi[i]);
                }
                if (gin[1]) {
                    for (std::size_t i = 0; i < gk.size(); ++i) gin[1][i] += static_cast<float>(gk[i]);
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and structural ops

Tensor reduce_sum(const Tensor& a) {
    double acc = 0;
    for (float v : a.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite("sum", out.data());
    if (a.tracked()) {
        a.tape()->record("sum", {&a}, out,
                         [n = a.numel()](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::int64_t i = 0; i < n; ++i) gin[0][i] += g[0];
                         });
    }
    return out;
}

Tensor reduce_mean(const Tensor& a) {
    double acc = 0;
    for (float v : a.data()) acc += v;
    const double n = static_cast<double>(a.numel());
    Tensor out = Tensor::scalar(static_cast<float>(acc / n));
    check_finite("mean", out.data());
    if (a.tracked()) {
        a.tape()->record("mean", {&a}, out,
                         [n](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             const float s = static_cast<float>(g[0] / n);
                             for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
                                 gin[0][i] += s;
                             }
                         });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != a.numel()) {
        throw Error("reshape: element count mismatch, " + shape_str(a.shape()) + " -> " +
                    shape_str(new_shape));
    }
    Tensor out = Tensor::from_data(std::move(new_shape),
                                   std::vector<float>(a.data().begin(), a.data().end()));
    if (a.tracked()) {
        a.tape()->record("reshape", {&a}, out,
                         [n = a.numel()](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (std::int64_t i = 0; i < n; ++i) gin[0][i] += g[i];
                         });
    }
    return out;
}

Tensor tile_spatial(const Tensor& v, int h, int w) {
    if (v.rank() != 1) throw Error("tile_spatial: expected rank-1 input, got " + shape_str(v.shape()));
    if (h < 1 || w < 1) throw Error("tile_spatial: target dims must be positive");
    const int c = v.shape()[0];
    Tensor out = Tensor::zeros({h, w, c});
    const float* pv = v.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t p = 0; p < std::int64_t(h) * w; ++p) {
        for (int j = 0; j < c; ++j) po[p * c + j] = pv[j];
    }
    if (v.tracked()) {
        v.tape()->record("tile_spatial", {&v}, out,
                         [h, w, c](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (int j = 0; j < c; ++j) {
                                 double acc = 0;
                                 for (std::int64_t p = 0; p < std::int64_t(h) * w; ++p) {
                                     acc += g[p * c + j];
                                 }
                                 gin[0][j] += static_cast<float>(acc);
                             }
                         });
    }
    return out;
}

Tensor subsample2(const Tensor& a) {
    if (a.rank() != 3) throw Error("subsample2: expected rank-3 input, got " + shape_str(a.shape()));
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    if (h % 2 != 0 || w % 2 != 0) {
        throw Error("subsample2: spatial dims must be even, got " + shape_str(a.shape()));
    }
    const int oh = h / 2, ow = w / 2;
    Tensor out = Tensor::zeros({oh, ow, c});
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const float* src = pa + (std::int64_t(2 * y) * w + 2 * x) * c;
            float* dst = po + (std::int64_t(y) * ow + x) * c;
            for (int j = 0; j < c; ++j) dst[j] = src[j];
        }
    }
    if (a.tracked()) {
        a.tape()->record("subsample2", {&a}, out,
                         [w, c, oh, ow](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (int y = 0; y < oh; ++y) {
                                 for (int x = 0; x < ow; ++x) {
                                     const float* gs = g.data() + (std::int64_t(y) * ow + x) * c;
                                     float* gd = gin[0] + (std::int64_t(2 * y) * w + 2 * x) * c;
                                     for (int j = 0; j < c; ++j) gd[j] += gs[j];
                                 }
                             }
                         });
    }
    return out;
}

Tensor upsample2_nearest(const Tensor& a) {
    if (a.rank() != 3) {
        throw Error("upsample2_nearest: expected rank-3 input, got " + shape_str(a.shape()));
    }
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    const int oh = 2 * h, ow = 2 * w;
    Tensor out = Tensor::zeros({oh, ow, c});
    const float* pa = a.data().data();
    float* po = out.mutable_data().data();
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const float* src = pa + (std::int64_t(y / 2) * w + x / 2) * c;
            float* dst = po + (std::int64_t(y) * ow + x) * c;
            for (int j = 0; j < c; ++j) dst[j] = src[j];
        }
    }
    if (a.tracked()) {
        a.tape()->record("upsample2_nearest", {&a}, out,
                         [w, c, oh, ow](std::span<const float> g, const std::vector<float*>& gin) {
                             if (!gin[0]) return;
                             for (int y = 0; y < oh; ++y) {
                                 for (int x = 0; x < ow; ++x) {
                                     const float* gs = g.data() + (std::int64_t(y) * ow + x) * c;
                                     float* gd = gin[0] + (std::int64_t(y / 2) * w + x / 2) * c;
                                     for (int j = 0; j < c; ++j) gd[j] += gs[j];
                                 }
                             }
                         });
    }
    return out;
}

namespace {
// Pooling cell bounds along one axis; never empty.
inline void pool_bounds(int i, int in_dim, int out_dim, int* lo, int* hi) {
    *lo = (i * in_dim) / out_dim;
    *hi = ((i + 1) * in_dim + out_dim - 1) / out_dim;
}
}  // namespace

Tensor adaptive_avg_pool(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) {
        throw Error("adaptive_avg_pool: expected rank-3 input, got " + shape_str(img.shape()));
    }
    if (out_h < 1 || out_w < 1) throw Error("adaptive_avg_pool: output dims must be positive");
    const int h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    Tensor out = Tensor::zeros({out_h, out_w, c});
    const float* pa = img.data().data();
    float* po = out.mutable_data().data();
    for (int oy = 0; oy < out_h; ++oy) {
        int y0, y1;
        pool_bounds(oy, h, out_h, &y0, &y1);
        for (int ox = 0; ox < out_w; ++ox) {
            int x0, x1;
            pool_bounds(ox, w, out_w, &x0, &x1);
            const double inv = 1.0 / (double(y1 - y0) * (x1 - x0));
            for (int j = 0; j < c; ++j) {
                double acc = 0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) acc += pa[(std::int64_t(y) * w + x) * c + j];
                }
                po[(std::int64_t(oy) * out_w + ox) * c + j] = static_cast<float>(acc * inv);
            }
        }
    }
    if (img.tracked()) {
        img.tape()->record(
            "adaptive_avg_pool", {&img}, out,
            [h, w, c, out_h, out_w](std::span<const float> g, const std::vector<float*>& gin) {
                if (!gin[0]) return;
                for (int oy = 0; oy < out_h; ++oy) {
                    int y0, y1;
                    pool_bounds(oy, h, out_h, &y0, &y1);
                    for (int ox = 0; ox < out_w; ++ox) {
                        int x0, x1;
                        pool_bounds(ox, w, out_w, &x0, &x1);
                        const float inv = 1.0f / (float(y1 - y0) * (x1 - x0));
                        for (int j = 0; j < c; ++j) {
                            const float gv = g[(std::int64_t(oy) * out_w + ox) * c + j] * inv;
                            for (int y = y0; y < y1; ++y) {
                                for (int x = x0; x < x1; ++x) {
                                    gin[0][(std::int64_t(y) * w + x) * c + j] += gv;
                                }
                            }
                        }
                    }
                }
            });
    }
    return out;
}

Tensor spatial_gradient(const Tensor& img) {
    if (img.rank() != 3) {
        throw Error("spatial_gradient: expected rank-3 input, got " + shape_str(img.shape()));
    }
    const int h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    if (h < 2 || w < 2) {
        throw Error("spatial_gradient: degenerate image " + shape_str(img.shape()) +
                    ", needs both spatial dims >= 2");
    }
    Tensor out = Tensor::zeros({h, w, c, 2});
    const float* pa = img.data().data();
    float* po = out.mutable_data().data();
    auto src = [&](int y, int x, int j) { return pa[(std::int64_t(y) * w + x) * c + j]; };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int j = 0; j < c; ++j) {
                float* dst = po + ((std::int64_t(y) * w + x) * c + j) * 2;
                dst[0] = x + 1 < w ? src(y, x + 1, j) - src(y, x, j) : 0.0f;
                dst[1] = y + 1 < h ? src(y + 1, x, j) - src(y, x, j) : 0.0f;
            }
        }
    }
    if (img.tracked()) {
        img.tape()->record(
            "spatial_gradient", {&img}, out,
            [h, w, c](std::span<const float> g, const std::vector<float*>& gin) {
                if (!gin[0]) return;
                auto slot = [&](int y, int x, int j) -> float& {
                    return gin[0][(std::int64_t(y) * w + x) * c + j];
                };
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        for (int j = 0; j < c; ++j) {
                            const float* gv = g.data() + ((std::int64_t(y) * w + x) * c + j) * 2;
                            if (x + 1 < w) {
                                slot(y, x + 1, j) += gv[0];
                                slot(y, x, j) -= gv[0];
                            }
                            if (y + 1 < h) {
                                slot(y + 1, x, j) += gv[1];
                                slot(y, x, j) -= gv[1];
                            }
                        }
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         float eps) {
    if (!(eps >= 1e-5f && eps <= 1e-2f)) {
        throw Error("finite_diff_check: eps must lie in [1e-5, 1e-2]");
    }
    if (x.tracked()) throw Error("finite_diff_check: x must be an untracked value");

    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor y = f(xl);
    if (y.rank() != 0) throw Error("finite_diff_check: f must return a scalar");

    Tensor ad = Tensor::zeros(x.shape());
    if (y.tracked()) {
        auto grads = tape.backward(y);
        ad = grads.at(xl.id());
    }

    double worst = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        Tensor xp = x;
        xp.mutable_data()[i] += eps;
        Tensor xm = x;
        xm.mutable_data()[i] -= eps;
        const double fp = f(xp).item();
        const double fm = f(xm).item();
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw Error("finite_diff_check: non-finite intermediate");
        }
        const double cd = (fp - fm) / (2.0 * double(eps));
        const double err = std::abs(double(ad.data()[i]) - cd) / std::max(1.0, std::abs(cd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace tssm
