#pragma once

#include "srl/core/graph.hpp"

namespace srl::core {

namespace detail {

/// Valid-padding window extraction: src (B x C x H x W) into a
/// (B*OH*OW) x (C*kh*kw) row-major buffer.
template <class S>
void im2col(const Tensor<S>& src, int kh, int kw, int stride, int OH, int OW,
            std::vector<S>& cols) {
  int B = src.shape[0], C = src.shape[1], H = src.shape[2], W = src.shape[3];
  std::size_t K = static_cast<std::size_t>(C) * kh * kw;
  cols.assign(static_cast<std::size_t>(B) * OH * OW * K, S(0));
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        std::size_t row = (static_cast<std::size_t>(b) * OH + oy) * OW + ox;
        S* dst = cols.data() + row * K;
        for (int c = 0; c < C; ++c) {
          const S* base = src.data.data() +
                          ((static_cast<std::size_t>(b) * C + c) * H + oy * stride) * W +
                          ox * stride;
          for (int dy = 0; dy < kh; ++dy) {
            const S* line = base + static_cast<std::size_t>(dy) * W;
            for (int dx = 0; dx < kw; ++dx) *dst++ = line[dx];
          }
        }
      }
}

/// Adjoint of im2col: scatter-adds the column buffer back into dst.
template <class S>
void col2im_add(const std::vector<S>& cols, int kh, int kw, int stride, int OH,
                int OW, Tensor<S>& dst) {
  int B = dst.shape[0], C = dst.shape[1], H = dst.shape[2], W = dst.shape[3];
  std::size_t K = static_cast<std::size_t>(C) * kh * kw;
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        std::size_t row = (static_cast<std::size_t>(b) * OH + oy) * OW + ox;
        const S* src = cols.data() + row * K;
        for (int c = 0; c < C; ++c) {
          S* base = dst.data.data() +
                    ((static_cast<std::size_t>(b) * C + c) * H + oy * stride) * W +
                    ox * stride;
          for (int dy = 0; dy < kh; ++dy) {
            S* line = base + static_cast<std::size_t>(dy) * W;
            for (int dx = 0; dx < kw; ++dx) line[dx] += *src++;
          }
        }
      }
}

}  // namespace detail

/// Valid (unpadded) 2-d cross-correlation.
/// input (B x C x H x W), kernel (O x C x kh x kw), bias (O) -> B x O x OH x OW
/// with OH = floor((H-kh)/stride)+1 and OW analogous.
template <class S>
typename Graph<S>::Ref conv2d(Graph<S>& g, typename Graph<S>::Ref x,
                              typename Graph<S>::Ref k, typename Graph<S>::Ref b,
                              int stride) {
  const auto& xs = x->value.shape;
  const auto& ks = k->value.shape;
  if (xs.size() != 4) throw ShapeError("conv2d: input must be B x C x H x W");
  if (ks.size() != 4) throw ShapeError("conv2d: kernel must be O x C x kh x kw");
  if (stride < 1) throw ContractError("conv2d: stride must be positive");
  int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  int O = ks[0], kh = ks[2], kw = ks[3];
  if (ks[1] != C)
    throw ShapeError("conv2d: kernel channel axis " + std::to_string(ks[1]) +
                     " != input channel axis " + std::to_string(C));
  if (kh > H)
    throw ShapeError("conv2d: kernel height " + std::to_string(kh) +
                     " exceeds input height " + std::to_string(H));
  if (kw > W)
    throw ShapeError("conv2d: kernel width " + std::to_string(kw) +
                     " exceeds input width " + std::to_string(W));
  if (b->value.numel() != static_cast<std::size_t>(O))
    throw ShapeError("conv2d: bias axis " + std::to_string(b->value.numel()) +
                     " != kernel output axis " + std::to_string(O));
  int OH = (H - kh) / stride + 1;
  int OW = (W - kw) / stride + 1;
  std::size_t K = static_cast<std::size_t>(C) * kh * kw;
  std::size_t rows = static_cast<std::size_t>(B) * OH * OW;

  std::vector<S> cols;
  detail::im2col(x->value, kh, kw, stride, OH, OW, cols);
  std::vector<S> out_mat(rows * O);
  MatMap<S>(out_mat.data(), static_cast<Eigen::Index>(rows), O).noalias() =
      ConstMatMap<S>(cols.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(K)) *
      ConstMatMap<S>(k->value.data.data(), O, static_cast<Eigen::Index>(K)).transpose();

  Tensor<S> out({B, O, OH, OW});
  for (int bb = 0; bb < B; ++bb)
    for (int o = 0; o < O; ++o) {
      S bias = b->value.data[o];
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox)
          out.at4(bb, o, oy, ox) =
              out_mat[((static_cast<std::size_t>(bb) * OH + oy) * OW + ox) * O + o] + bias;
    }

  bool needs = x->needs_grad || k->needs_grad || b->needs_grad;
  typename Graph<S>::Ref n = g.make(std::move(out), needs, "conv2d");
  if (!needs) return n;
  n->back = [x, k, b, cols = std::move(cols), B, C, O, OH, OW, kh, kw, stride,
             K, rows](typename Graph<S>::Node& self) {
    std::vector<S> gmat(rows * O);
    for (int bb = 0; bb < B; ++bb)
      for (int o = 0; o < O; ++o)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox)
            gmat[((static_cast<std::size_t>(bb) * OH + oy) * OW + ox) * O + o] =
                self.grad.at4(bb, o, oy, ox);
    ConstMatMap<S> g(gmat.data(), static_cast<Eigen::Index>(rows), O);
    if (k->needs_grad) {
      k->ensure_grad();
      MatMap<S>(k->grad.data.data(), O, static_cast<Eigen::Index>(K)).noalias() +=
          g.transpose() * ConstMatMap<S>(cols.data(), static_cast<Eigen::Index>(rows),
                                         static_cast<Eigen::Index>(K));
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (int o = 0; o < O; ++o) b->grad.data[o] += gmat[r * O + o];
    }
    if (x->needs_grad) {
      x->ensure_grad();
      std::vector<S> dcols(rows * K);
      MatMap<S>(dcols.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(K))
          .noalias() = g * ConstMatMap<S>(k->value.data.data(), O,
                                          static_cast<Eigen::Index>(K));
      detail::col2im_add(dcols, kh, kw, stride, OH, OW, x->grad);
    }
  };
  return n;
}

/// Transposed convolution (the adjoint of conv2d's linear map), used by the
/// mirrored decoders. input (B x C x H x W), kernel (C x O x kh x kw),
/// bias (O) -> B x O x OH x OW with OH = (H-1)*stride + kh.
template <class S>
typename Graph<S>::Ref conv2d_transpose(Graph<S>& g, typename Graph<S>::Ref x,
                                        typename Graph<S>::Ref k,
                                        typename Graph<S>::Ref b, int stride) {
  const auto& xs = x->value.shape;
  const auto& ks = k->value.shape;
  if (xs.size() != 4) throw ShapeError("conv2d_transpose: input must be B x C x H x W");
  if (ks.size() != 4) throw ShapeError("conv2d_transpose: kernel must be C x O x kh x kw");
  if (stride < 1) throw ContractError("conv2d_transpose: stride must be positive");
  int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  int O = ks[1], kh = ks[2], kw = ks[3];
  if (ks[0] != C)
    throw ShapeError("conv2d_transpose: kernel channel axis " + std::to_string(ks[0]) +
                     " != input channel axis " + std::to_string(C));
  if (b->value.numel() != static_cast<std::size_t>(O))
    throw ShapeError("conv2d_transpose: bias axis " + std::to_string(b->value.numel()) +
                     " != kernel output axis " + std::to_string(O));
  int OH = (H - 1) * stride + kh;
  int OW = (W - 1) * stride + kw;
  std::size_t K = static_cast<std::size_t>(O) * kh * kw;
  std::size_t rows = static_cast<std::size_t>(B) * H * W;

  // x relayout: row (b, i, j), column c.
  std::vector<S> xrows(rows * C);
  for (int bb = 0; bb < B; ++bb)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          xrows[((static_cast<std::size_t>(bb) * H + i) * W + j) * C + c] =
              x->value.at4(bb, c, i, j);

  std::vector<S> colsT(rows * K);
  MatMap<S>(colsT.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K))
      .noalias() = ConstMatMap<S>(xrows.data(), static_cast<Eigen::Index>(rows), C) *
                   ConstMatMap<S>(k->value.data.data(), C, static_cast<Eigen::Index>(K));

  Tensor<S> out({B, O, OH, OW});
  for (int o = 0; o < O; ++o) {
    S bias = b->value.data[o];
    for (int bb = 0; bb < B; ++bb)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) out.at4(bb, o, oy, ox) = bias;
  }
  for (int bb = 0; bb < B; ++bb)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const S* src = colsT.data() + ((static_cast<std::size_t>(bb) * H + i) * W + j) * K;
        for (int o = 0; o < O; ++o)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx)
              out.at4(bb, o, i * stride + dy, j * stride + dx) += *src++;
      }

  bool needs = x->needs_grad || k->needs_grad || b->needs_grad;
  typename Graph<S>::Ref n = g.make(std::move(out), needs, "conv2d_transpose");
  if (!needs) return n;
  n->back = [x, k, b, xrows = std::move(xrows), B, C, O, H, W, OH, OW, kh, kw,
             stride, K, rows](typename Graph<S>::Node& self) {
    // Gathering windows of the output gradient inverts the scatter above.
    std::vector<S> dcolsT;
    detail::im2col(self.grad, kh, kw, stride, H, W, dcolsT);
    if (x->needs_grad) {
      x->ensure_grad();
      std::vector<S> dxrows(rows * C);
      MatMap<S>(dxrows.data(), static_cast<Eigen::Index>(rows), C).noalias() =
          ConstMatMap<S>(dcolsT.data(), static_cast<Eigen::Index>(rows),
                         static_cast<Eigen::Index>(K)) *
          ConstMatMap<S>(k->value.data.data(), C, static_cast<Eigen::Index>(K))
              .transpose();
      for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
              x->grad.at4(bb, c, i, j) +=
                  dxrows[((static_cast<std::size_t>(bb) * H + i) * W + j) * C + c];
    }
    if (k->needs_grad) {
      k->ensure_grad();
      MatMap<S>(k->grad.data.data(), C, static_cast<Eigen::Index>(K)).noalias() +=
          ConstMatMap<S>(xrows.data(), static_cast<Eigen::Index>(rows), C).transpose() *
          ConstMatMap<S>(dcolsT.data(), static_cast<Eigen::Index>(rows),
                         static_cast<Eigen::Index>(K));
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (int bb = 0; bb < B; ++bb)
        for (int o = 0; o < O; ++o) {
          S acc = 0;
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) acc += self.grad.at4(bb, o, oy, ox);
          b->grad.data[o] += acc;
        }
    }
  };
  return n;
}

}  // namespace srl::core
