#pragma once

#include <cstdint>
#include <vector>

#include "hrformer/init.hpp"
#include "hrformer/tensor.hpp"

namespace hrformer {

inline constexpr double kMaskedLogit = -1e9;

/// Reassembly metadata of a window partition.
struct WindowGeometry {
  Index batch = 0;
  Index channels = 0;
  Index height = 0;  // original extents
  Index width = 0;
  Index padded_height = 0;  // multiples of window
  Index padded_width = 0;
  Index window = 0;

  Index windows_per_column() const { return padded_height / window; }
  Index windows_per_row() const { return padded_width / window; }
  Index windows_per_image() const { return windows_per_column() * windows_per_row(); }
  Index tokens_per_window() const { return window * window; }
};

/// A feature map split into non-overlapping K x K windows.
///
/// tokens has shape [batch * P, K*K, D]; window p of image n sits at row
/// n * P + p, windows ordered row-major over the padded map and tokens
/// row-major inside a window. valid_mask has P * K*K entries (the same for
/// every image) and is 1 exactly where the token lies inside the original map.
struct WindowSet {
  Tensor tokens;
  std::vector<std::uint8_t> valid_mask;
  WindowGeometry origin;

  bool is_valid(Index window_index, Index token) const {
    const Index p = window_index % origin.windows_per_image();
    return valid_mask[static_cast<std::size_t>(p * origin.tokens_per_window() + token)] != 0;
  }
};

/// Local-window multi-head self-attention weights for one block.
///
/// Head h uses columns [h*D/H, (h+1)*D/H) of w_q, w_k, w_v. rel_bias holds
/// one (2K-1) x (2K-1) table per head, indexed by (drow + K-1, dcol + K-1).
struct AttentionParams {
  Index channels = 0;
  Index heads = 0;
  Index window = 0;
  Tensor w_q, w_k, w_v, w_o;  // [D, D]
  Tensor b_q, b_k, b_v, b_o;  // [D]
  Tensor rel_bias;            // [H, 2K-1, 2K-1]

  static AttentionParams init(Index channels, Index heads, Index window, Rng& rng);
  void validate() const;
};

WindowSet partition_windows(const Tensor& x, Index window);
Tensor merge_windows(const WindowSet& windows);

// [K*K, K*K] matrix with entry (i, j) = table[h, row_i - row_j + K-1, col_i - col_j + K-1].
Tensor rel_bias_lookup(const Tensor& table, Index window, Index head);

// Per window: X + Concat_h(softmax(Q_h K_h^T / sqrt(D/H) + B_h + M) V_h) W_o + b_o,
// where M masks padded keys; padded query rows are zero in the result.
// With add_residual false the leading X term is left out.
WindowSet window_mhsa(const WindowSet& windows, const AttentionParams& params, bool add_residual = true);

}  // namespace hrformer
