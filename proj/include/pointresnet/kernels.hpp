#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace pointresnet::kernels {

// Row-major GEMM. Every output row is produced by the same instruction
// sequence regardless of its position in the matrix, so permuting the rows
// of `a` permutes the rows of `c` bitwise.

namespace detail {

template <class T>
struct GemmBlocking {
  static constexpr std::size_t mr = 6;
  static constexpr std::size_t nr = 128 / sizeof(T);
  static constexpr std::size_t kc = 256;
  static constexpr std::size_t nc = 512;
};

template <class T>
inline void micro_tile(std::size_t kc, const T* a, std::size_t lda, const T* packed_b,
                       T* c, std::size_t ldc, std::size_t rows, std::size_t cols,
                       bool overwrite) {
  constexpr std::size_t MR = GemmBlocking<T>::mr;
  constexpr std::size_t NR = GemmBlocking<T>::nr;
  T acc[MR][NR] = {};
  for (std::size_t k = 0; k < kc; ++k) {
    const T* b = packed_b + k * NR;
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = r < rows ? a[r * lda + k] : T(0);
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * b[j];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + r * ldc;
    if (overwrite) {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = acc[r][j];
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] += acc[r][j];
    }
  }
}

}  // namespace detail

/// c[m,n] (+)= a[m,k] * b[k,n]; all operands dense row-major.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  using B = detail::GemmBlocking<T>;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  std::vector<T> packed(B::kc * (B::nc + B::nr));
  for (std::size_t jc = 0; jc < n; jc += B::nc) {
    const std::size_t ncols = std::min(B::nc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += B::kc) {
      const std::size_t kdepth = std::min(B::kc, k - pc);
      for (std::size_t jp = 0; jp < ncols; jp += B::nr) {
        const std::size_t width = std::min(B::nr, ncols - jp);
        T* dst = packed.data() + jp * kdepth;
        for (std::size_t kk = 0; kk < kdepth; ++kk) {
          const T* src = b + (pc + kk) * n + jc + jp;
          for (std::size_t j = 0; j < B::nr; ++j) dst[kk * B::nr + j] = j < width ? src[j] : T(0);
        }
      }
      const bool overwrite = !accumulate && pc == 0;
      for (std::size_t i = 0; i < m; i += B::mr) {
        const std::size_t rows = std::min(B::mr, m - i);
        for (std::size_t jp = 0; jp < ncols; jp += B::nr) {
          const std::size_t width = std::min(B::nr, ncols - jp);
          detail::micro_tile<T>(kdepth, a + i * k + pc, k, packed.data() + jp * kdepth,
                                c + i * n + jc + jp, n, rows, width, overwrite);
        }
      }
    }
  }
}

/// out[cols, rows] = transpose of in[rows, cols].
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(rows, i0 + tile);
      const std::size_t j1 = std::min(cols, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

template <class T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, const T* in) {
  std::vector<T> out(rows * cols);
  transpose(rows, cols, in, out.data());
  return out;
}

}  // namespace pointresnet::kernels
