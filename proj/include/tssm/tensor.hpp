#pragma once

// Dense float32 tensors plus a record-and-replay tape for reverse-mode
// differentiation. Values are plain row-major buffers; an op that sees a
// tracked input appends one entry (operation kind, input ids, output id,
// backward closure) to the owning tape. Tape::backward walks the entries
// in reverse exactly once and returns gradients for every registered leaf.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "tssm/common.hpp"

namespace tssm {

class Tape;
using ValueId = std::int64_t;

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor scalar(float value);
    // Validates length(data) == product(shape) and that every value is finite.
    static Tensor from_data(Shape shape, std::vector<float> data);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::span<const float> data() const { return data_; }
    std::span<float> mutable_data() { return data_; }

    // Value of a rank-0 tensor.
    float item() const;
    // Row-major element access, bounds-checked. Test and glue convenience.
    float at(std::initializer_list<int> index) const;

    bool tracked() const { return id_ != 0; }
    ValueId id() const { return id_; }
    Tape* tape() const { return tape_; }
    // Same values, no tape membership. Gradients do not flow past this copy.
    Tensor detached() const;

private:
    Shape shape_;
    std::vector<float> data_;
    Tape* tape_ = nullptr;  // non-owning; the tape must outlive tracked tensors
    ValueId id_ = 0;        // 0 = constant (not part of any record)

    friend class Tape;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers an untracked tensor as a differentiable leaf of this record
    // and returns the tracked copy.
    Tensor leaf(const Tensor& t);

    // Gradients of a scalar loss for every leaf. Leaves the loss never
    // touched get zero gradients. May be called repeatedly; the record is
    // not consumed.
    std::unordered_map<ValueId, Tensor> backward(const Tensor& loss) const;

    std::size_t size() const { return entries_.size(); }

    // Op-author interface. `in_grads` is aligned with `inputs`; a slot is
    // null when that input is a constant. Closures accumulate (+=).
    using BackwardFn = std::function<void(std::span<const float> out_grad,
                                          const std::vector<float*>& in_grads)>;
    void record(const char* kind, std::initializer_list<const Tensor*> inputs,
                Tensor& out, BackwardFn back);

    struct EntryView {
        const char* kind;
        ValueId out;
        std::vector<ValueId> inputs;
    };
    std::vector<EntryView> entries_view() const;

private:
    struct Entry {
        const char* kind;
        std::vector<ValueId> inputs;
        std::vector<std::int64_t> input_numels;
        ValueId out = 0;
        BackwardFn back;
    };
    std::vector<Entry> entries_;
    std::vector<std::pair<ValueId, Shape>> leaves_;
    ValueId next_id_ = 1;
};

// Tape shared by the tracked operands (null when all are constants).
// Mixing tensors from two different tapes is an error.
Tape* common_tape(const Tensor& a, const Tensor& b);

// Elementwise ops. Binary kinds require equal shapes or a rank-0 operand
// on either side (the only broadcast supported).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp01(const Tensor& a);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Same-size zero-padded convolution: input [h,w,c_in], kernel
// [k,k,c_in,c_out] with k odd -> [h,w,c_out].
Tensor conv2d(const Tensor& input, const Tensor& kernel);

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);

// Metadata-only: same flat data, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape new_shape);

// [c] -> [h,w,c], the vector repeated at every spatial position.
Tensor tile_spatial(const Tensor& v, int h, int w);

// [h,w,c] -> [h/2,w/2,c], keeps even-indexed rows/columns. h, w even.
Tensor subsample2(const Tensor& a);

// [h,w,c] -> [2h,2w,c] nearest-neighbor.
Tensor upsample2_nearest(const Tensor& a);

// [h,w,c] -> [out_h,out_w,c]; cell (i,j) averages rows [i*h/out_h,
// ceil((i+1)*h/out_h)) x the analogous columns. Cells are never empty.
Tensor adaptive_avg_pool(const Tensor& img, int out_h, int out_w);

// Forward differences of a [H,W,c] image -> [H,W,c,2] with (dx, dy) last.
// dx is zero in the final column, dy in the final row. Requires H,W >= 2.
Tensor spatial_gradient(const Tensor& img);

// Max over coordinates of |autodiff - central difference| / max(1, |cd|)
// for a scalar-valued f evaluated at x. eps must lie in [1e-5, 1e-2].
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, float eps);

}  // namespace tssm
