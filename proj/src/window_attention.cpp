#include "hrformer/window_attention.hpp"

#include <cmath>
#include <string>

#include "hrformer/error.hpp"

namespace hrformer {

namespace {

Index round_up(Index value, Index multiple) { return (value + multiple - 1) / multiple * multiple; }

// Maps (window row p of a batch, token t, channel d) to the NCHW offset, or -1 for padding.
struct WindowIndexer {
  const WindowGeometry& g;

  Index offset(Index window_row, Index token, Index channel) const {
    const Index wpi = g.windows_per_image();
    const Index n = window_row / wpi;
    const Index p = window_row % wpi;
    const Index y = (p / g.windows_per_row()) * g.window + token / g.window;
    const Index x = (p % g.windows_per_row()) * g.window + token % g.window;
    if (y >= g.height || x >= g.width) return -1;
    return ((n * g.channels + channel) * g.height + y) * g.width + x;
  }
};

std::vector<Index> relative_index(Index window) {
  const Index t = window * window;
  const Index side = 2 * window - 1;
  std::vector<Index> idx(static_cast<std::size_t>(t * t));
  for (Index i = 0; i < t; ++i) {
    for (Index j = 0; j < t; ++j) {
      const Index dr = i / window - j / window + window - 1;
      const Index dc = i % window - j % window + window - 1;
      idx[static_cast<std::size_t>(i * t + j)] = dr * side + dc;
    }
  }
  return idx;
}

}  // namespace

AttentionParams AttentionParams::init(Index channels, Index heads, Index window, Rng& rng) {
  AttentionParams p;
  p.channels = channels;
  p.heads = heads;
  p.window = window;
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw ConfigError("attention: channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (window < 1) throw ConfigError("attention: window size must be >= 1");
  p.w_q = truncated_normal({channels, channels}, rng);
  p.w_k = truncated_normal({channels, channels}, rng);
  p.w_v = truncated_normal({channels, channels}, rng);
  p.w_o = truncated_normal({channels, channels}, rng);
  p.b_q = Tensor::zeros({channels});
  p.b_k = Tensor::zeros({channels});
  p.b_v = Tensor::zeros({channels});
  p.b_o = Tensor::zeros({channels});
  p.rel_bias = truncated_normal({heads, 2 * window - 1, 2 * window - 1}, rng);
  return p;
}

void AttentionParams::validate() const {
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw ConfigError("attention: channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (window < 1) throw ConfigError("attention: window size must be >= 1");
  const Shape square{channels, channels};
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->shape() != square) throw ConfigError("attention: projection shape " + to_string(w->shape()));
  }
  for (const Tensor* b : {&b_q, &b_k, &b_v, &b_o}) {
    if (b->size() != channels) throw ConfigError("attention: bias shape " + to_string(b->shape()));
  }
  if (rel_bias.shape() != Shape{heads, 2 * window - 1, 2 * window - 1}) {
    throw ConfigError("attention: relative bias table shape " + to_string(rel_bias.shape()));
  }
}

WindowSet partition_windows(const Tensor& x, Index window) {
  if (window < 1) throw ConfigError("partition_windows: window size must be >= 1, got " + std::to_string(window));
  if (x.rank() != 4) throw DimensionError("partition_windows: expected NCHW map, got " + to_string(x.shape()));
  WindowSet ws;
  WindowGeometry& g = ws.origin;
  g.batch = x.dim(0);
  g.channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  if (g.height < 1 || g.width < 1) throw DimensionError("partition_windows: empty map " + to_string(x.shape()));
  g.window = window;
  g.padded_height = round_up(g.height, window);
  g.padded_width = round_up(g.width, window);

  const Index wpi = g.windows_per_image();
  const Index t = g.tokens_per_window();
  const Index rows = g.batch * wpi;
  ws.valid_mask.assign(static_cast<std::size_t>(wpi * t), 0);
  for (Index p = 0; p < wpi; ++p) {
    for (Index k = 0; k < t; ++k) {
      const Index y = (p / g.windows_per_row()) * window + k / window;
      const Index xx = (p % g.windows_per_row()) * window + k % window;
      ws.valid_mask[static_cast<std::size_t>(p * t + k)] = (y < g.height && xx < g.width) ? 1 : 0;
    }
  }

  // gather[i] = source offset of token element i, or -1 for zero padding
  std::vector<Index> gather(static_cast<std::size_t>(rows * t * g.channels));
  const WindowIndexer ix{g};
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < t; ++k)
      for (Index d = 0; d < g.channels; ++d)
        gather[static_cast<std::size_t>((r * t + k) * g.channels + d)] = ix.offset(r, k, d);

  Tensor tokens({rows, t, g.channels});
  for (std::size_t i = 0; i < gather.size(); ++i) tokens.data()[i] = gather[i] >= 0 ? x[gather[i]] : 0.0;
  if (should_record({&x})) {
    active_tape()->record("partition_windows", {x}, tokens, [x, tokens, gather = std::move(gather)]() {
      if (!x.requires_grad()) return;
      Tensor xx = x;
      auto& gx = xx.mutable_grad();
      const auto g = tokens.grad();
      for (std::size_t i = 0; i < gather.size(); ++i)
        if (gather[i] >= 0) gx[static_cast<std::size_t>(gather[i])] += g[i];
    });
  }
  ws.tokens = tokens;
  return ws;
}

Tensor merge_windows(const WindowSet& windows) {
  const WindowGeometry& g = windows.origin;
  if (g.window < 1 || g.padded_height % g.window != 0 || g.padded_width % g.window != 0 ||
      g.padded_height < g.height || g.padded_width < g.width || g.padded_height - g.height >= g.window ||
      g.padded_width - g.width >= g.window) {
    throw InternalError("merge_windows: inconsistent window geometry");
  }
  const Index t = g.tokens_per_window();
  const Index rows = g.batch * g.windows_per_image();
  if (windows.tokens.shape() != Shape{rows, t, g.channels} ||
      static_cast<Index>(windows.valid_mask.size()) != g.windows_per_image() * t) {
    throw InternalError("merge_windows: token block " + to_string(windows.tokens.shape()) +
                        " does not match window geometry");
  }
  Tensor out({g.batch, g.channels, g.height, g.width});
  const WindowIndexer ix{g};
  std::vector<Index> scatter(static_cast<std::size_t>(rows * t * g.channels));
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < t; ++k)
      for (Index d = 0; d < g.channels; ++d)
        scatter[static_cast<std::size_t>((r * t + k) * g.channels + d)] = ix.offset(r, k, d);
  const Tensor& tokens = windows.tokens;
  for (std::size_t i = 0; i < scatter.size(); ++i)
    if (scatter[i] >= 0) out[scatter[i]] = tokens.data()[i];
  if (should_record({&tokens})) {
    active_tape()->record("merge_windows", {tokens}, out, [tokens, out, scatter = std::move(scatter)]() {
      Tensor tt = tokens;
      auto& gt = tt.mutable_grad();
      const auto g = out.grad();
      for (std::size_t i = 0; i < scatter.size(); ++i)
        if (scatter[i] >= 0) gt[i] += g[static_cast<std::size_t>(scatter[i])];
    });
  }
  return out;
}

Tensor rel_bias_lookup(const Tensor& table, Index window, Index head) {
  const Index side = 2 * window - 1;
  if (table.rank() != 3 || table.dim(1) != side || table.dim(2) != side || head < 0 || head >= table.dim(0)) {
    throw DimensionError("rel_bias_lookup: table " + to_string(table.shape()) + " for window " +
                         std::to_string(window));
  }
  const Index t = window * window;
  const auto idx = relative_index(window);
  Tensor out({t, t});
  for (Index i = 0; i < t * t; ++i) out[i] = table[head * side * side + idx[static_cast<std::size_t>(i)]];
  return out;
}

WindowSet window_mhsa(const WindowSet& windows, const AttentionParams& params, bool add_residual) {
  params.validate();
  const WindowGeometry& geo = windows.origin;
  const Tensor& tokens = windows.tokens;
  if (tokens.rank() != 3 || tokens.dim(2) != params.channels) {
    throw ConfigError("window_mhsa: token channels " + to_string(tokens.shape()) + " vs attention width " +
                      std::to_string(params.channels));
  }
  if (geo.window != params.window || tokens.dim(1) != geo.tokens_per_window()) {
    throw ConfigError("window_mhsa: window size " + std::to_string(geo.window) + " vs attention window " +
                      std::to_string(params.window));
  }
  const Index rows = tokens.dim(0);
  const Index t = tokens.dim(1);
  const Index d = params.channels;
  const Index heads = params.heads;
  const Index dh = d / heads;
  const Index side = 2 * params.window - 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto rel_idx = relative_index(params.window);

  const bool record = should_record({&tokens, &params.w_q, &params.w_k, &params.w_v, &params.w_o, &params.b_q,
                                     &params.b_k, &params.b_v, &params.b_o, &params.rel_bias});

  using Mat = RowMatrix<double>;
  const auto wq = ConstMatrixMap<double>(params.w_q.raw(), d, d);
  const auto wk = ConstMatrixMap<double>(params.w_k.raw(), d, d);
  const auto wv = ConstMatrixMap<double>(params.w_v.raw(), d, d);
  const auto wo = ConstMatrixMap<double>(params.w_o.raw(), d, d);
  const auto bq = ConstMatrixMap<double>(params.b_q.raw(), 1, d);
  const auto bk = ConstMatrixMap<double>(params.b_k.raw(), 1, d);
  const auto bv = ConstMatrixMap<double>(params.b_v.raw(), 1, d);
  const auto bo = ConstMatrixMap<double>(params.b_o.raw(), 1, d);

  Tensor out({rows, t, d});
  // Saved activations for backward: q, k, v, concat heads, attention weights.
  std::vector<double> saved_q, saved_k, saved_v, saved_o, saved_a;
  if (record) {
    saved_q.resize(static_cast<std::size_t>(rows * t * d));
    saved_k.resize(saved_q.size());
    saved_v.resize(saved_q.size());
    saved_o.resize(saved_q.size());
    saved_a.resize(static_cast<std::size_t>(rows * heads * t * t));
  }

  Mat q(t, d), k(t, d), v(t, d), o(t, d), s(t, t);
  for (Index r = 0; r < rows; ++r) {
    const auto x = ConstMatrixMap<double>(tokens.raw() + r * t * d, t, d);
    q.noalias() = x * wq;
    q.rowwise() += bq.row(0);
    k.noalias() = x * wk;
    k.rowwise() += bk.row(0);
    v.noalias() = x * wv;
    v.rowwise() += bv.row(0);
    for (Index h = 0; h < heads; ++h) {
      s.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
      s *= scale;
      const double* table = params.rel_bias.raw() + h * side * side;
      for (Index i = 0; i < t; ++i) {
        for (Index j = 0; j < t; ++j) {
          s(i, j) += table[rel_idx[static_cast<std::size_t>(i * t + j)]];
          if (!windows.is_valid(r, j)) s(i, j) += kMaskedLogit;
        }
      }
      for (Index i = 0; i < t; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      o.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
      if (record) MatrixMap<double>(saved_a.data() + (r * heads + h) * t * t, t, t) = s;
    }
    auto y = MatrixMap<double>(out.raw() + r * t * d, t, d);
    y.noalias() = o * wo;
    y.rowwise() += bo.row(0);
    if (add_residual) y += x;
    for (Index i = 0; i < t; ++i)
      if (!windows.is_valid(r, i)) y.row(i).setZero();
    if (record) {
      const Index off = r * t * d;
      MatrixMap<double>(saved_q.data() + off, t, d) = q;
      MatrixMap<double>(saved_k.data() + off, t, d) = k;
      MatrixMap<double>(saved_v.data() + off, t, d) = v;
      MatrixMap<double>(saved_o.data() + off, t, d) = o;
    }
  }

  if (record) {
    const AttentionParams p = params;
    const std::vector<std::uint8_t> mask = windows.valid_mask;
    const Index wpi = geo.windows_per_image();
    active_tape()->record(
        "window_mhsa", {tokens, p.w_q, p.w_k, p.w_v, p.w_o, p.b_q, p.b_k, p.b_v, p.b_o, p.rel_bias}, out,
        [=, saved_q = std::move(saved_q), saved_k = std::move(saved_k), saved_v = std::move(saved_v),
         saved_o = std::move(saved_o), saved_a = std::move(saved_a)]() {
          auto grad_of = [](Tensor tensor) -> double* {
            return tensor.requires_grad() ? tensor.mutable_grad().data() : nullptr;
          };
          double* gx = grad_of(tokens);
          double* gwq = grad_of(p.w_q);
          double* gwk = grad_of(p.w_k);
          double* gwv = grad_of(p.w_v);
          double* gwo = grad_of(p.w_o);
          double* gbq = grad_of(p.b_q);
          double* gbk = grad_of(p.b_k);
          double* gbv = grad_of(p.b_v);
          double* gbo = grad_of(p.b_o);
          double* grel = grad_of(p.rel_bias);
          const auto gout = out.grad();
          const auto wq_ = ConstMatrixMap<double>(p.w_q.raw(), d, d);
          const auto wk_ = ConstMatrixMap<double>(p.w_k.raw(), d, d);
          const auto wv_ = ConstMatrixMap<double>(p.w_v.raw(), d, d);
          const auto wo_ = ConstMatrixMap<double>(p.w_o.raw(), d, d);
          Mat dy(t, d), dcat(t, d), dq(t, d), dk(t, d), dv(t, d), da(t, t), ds(t, t);
          for (Index r = 0; r < rows; ++r) {
            const Index off = r * t * d;
            const Index pidx = r % wpi;
            dy = ConstMatrixMap<double>(gout.data() + off, t, d);
            for (Index i = 0; i < t; ++i)
              if (mask[static_cast<std::size_t>(pidx * t + i)] == 0) dy.row(i).setZero();
            const auto x = ConstMatrixMap<double>(tokens.raw() + off, t, d);
            const auto q = ConstMatrixMap<double>(saved_q.data() + off, t, d);
            const auto k = ConstMatrixMap<double>(saved_k.data() + off, t, d);
            const auto v = ConstMatrixMap<double>(saved_v.data() + off, t, d);
            const auto o = ConstMatrixMap<double>(saved_o.data() + off, t, d);
            if (gwo) MatrixMap<double>(gwo, d, d).noalias() += o.transpose() * dy;
            if (gbo) MatrixMap<double>(gbo, 1, d) += dy.colwise().sum();
            dcat.noalias() = dy * wo_.transpose();
            for (Index h = 0; h < heads; ++h) {
              const auto a = ConstMatrixMap<double>(saved_a.data() + (r * heads + h) * t * t, t, t);
              da.noalias() = dcat.middleCols(h * dh, dh) * v.middleCols(h * dh, dh).transpose();
              dv.middleCols(h * dh, dh).noalias() = a.transpose() * dcat.middleCols(h * dh, dh);
              ds = a.array() * (da.colwise() - (da.array() * a.array()).rowwise().sum().matrix()).array();
              if (grel) {
                double* table = grel + h * side * side;
                for (Index i = 0; i < t; ++i)
                  for (Index j = 0; j < t; ++j) table[rel_idx[static_cast<std::size_t>(i * t + j)]] += ds(i, j);
              }
              dq.middleCols(h * dh, dh).noalias() = scale * (ds * k.middleCols(h * dh, dh));
              dk.middleCols(h * dh, dh).noalias() = scale * (ds.transpose() * q.middleCols(h * dh, dh));
            }
            if (gwq) MatrixMap<double>(gwq, d, d).noalias() += x.transpose() * dq;
            if (gwk) MatrixMap<double>(gwk, d, d).noalias() += x.transpose() * dk;
            if (gwv) MatrixMap<double>(gwv, d, d).noalias() += x.transpose() * dv;
            if (gbq) MatrixMap<double>(gbq, 1, d) += dq.colwise().sum();
            if (gbk) MatrixMap<double>(gbk, 1, d) += dk.colwise().sum();
            if (gbv) MatrixMap<double>(gbv, 1, d) += dv.colwise().sum();
            if (gx) {
              auto dx = MatrixMap<double>(gx + off, t, d);
              if (add_residual) dx += dy;
              dx.noalias() += dq * wq_.transpose();
              dx.noalias() += dk * wk_.transpose();
              dx.noalias() += dv * wv_.transpose();
            }
          }
        });
  }

  WindowSet result;
  result.tokens = out;
  result.valid_mask = windows.valid_mask;
  result.origin = geo;
  return result;
}

}  // namespace hrformer
