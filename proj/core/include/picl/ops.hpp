#pragma once

#include <utility>
#include <vector>

#include "picl/tensor.hpp"

namespace picl {

// Elementwise ops. For binary ops the shapes must match, or b's shape must be
// a trailing suffix of a's (b is broadcast over a's leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor sigmoid(const Tensor& a);
Tensor texp(const Tensor& a);
Tensor tlog(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise softmax on [m, n].
Tensor softmax_rows(const Tensor& a);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// x [T,din], w [din,dout], b [dout] -> [T,dout]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// [C,H,W] -> [C] spatial mean
Tensor mean_hw(const Tensor& a);

// Same-padding 2D convolution, odd square kernel. x [Cin,H,W],
// w [Cout,Cin,k,k], bias [Cout]; output [Cout, ceil(H/stride), ceil(W/stride)].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1);

// Square resampling between resolutions; x is [H,W] or [C,H,W].
Tensor resize_bilinear(const Tensor& x, int out_res);
Tensor resize_nearest(const Tensor& x, int out_res);

// Fused attention scores: softmax_rows(q . k^T * scale_factor).
// q [m,d_h], k [n,d_h] -> [m,n]. Cheaper than composing the three ops.
Tensor scaled_softmax_nt(const Tensor& q, const Tensor& k, double scale_factor);

// Row/column structure ops on [T,d] matrices.
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor stack_rows(const std::vector<Tensor>& rows);  // each [d] -> [T,d]
Tensor row(const Tensor& x, int i);                  // [T,d] -> [d]
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

// Pre-norm transformer layer norm over the last dim of [T,d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// 2D rotary embedding on one head slice [T,d_h], d_h % 4 == 0. First half of
// dims rotates by the token's y coordinate, second half by x.
Tensor rope_rotate_2d(const Tensor& x, const std::vector<std::pair<double, double>>& coords);

// [C] -> [C,H,W] constant over space.
Tensor broadcast_spatial(const Tensor& v, int h, int w);

Tensor reshape(const Tensor& x, Shape shape);

// [d,H,W] feature map <-> [H*W, d] token matrix.
Tensor chw_to_tokens(const Tensor& x);
Tensor tokens_to_chw(const Tensor& x, int channels, int h, int w);

// Numerically stable mean binary cross-entropy; targets must be detached.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace picl
