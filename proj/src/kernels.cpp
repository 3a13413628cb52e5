#include "saot/kernels.hpp"

#include <algorithm>

namespace saot::kernels {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T{0}) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

template <typename T>
void im2col(const T* x, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh, std::size_t kw, T* cols) {
  const std::ptrdiff_t rh = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t rw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::size_t patch = kh * kw * cin;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      T* dst = cols + (i * w + j) * patch;
      for (std::size_t di = 0; di < kh; ++di) {
        const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - rh;
        for (std::size_t dj = 0; dj < kw; ++dj) {
          const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - rw;
          T* d = dst + (di * kw + dj) * cin;
          if (si < 0 || sj < 0 || si >= static_cast<std::ptrdiff_t>(h) || sj >= static_cast<std::ptrdiff_t>(w)) {
            std::fill(d, d + cin, T{0});
          } else {
            const T* s = x + (static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)) * cin;
            std::copy(s, s + cin, d);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh, std::size_t kw, T* dx) {
  const std::ptrdiff_t rh = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t rw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::size_t patch = kh * kw * cin;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const T* src = cols + (i * w + j) * patch;
      for (std::size_t di = 0; di < kh; ++di) {
        const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - rh;
        if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dj = 0; dj < kw; ++dj) {
          const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - rw;
          if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* s = src + (di * kw + dj) * cin;
          T* d = dx + (static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)) * cin;
          for (std::size_t ch = 0; ch < cin; ++ch) d[ch] += s[ch];
        }
      }
    }
  }
}

#define SAOT_INSTANTIATE(T)                                                                              \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);            \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);         \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);         \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, T*); \
  template void col2im_add<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, T*);

SAOT_INSTANTIATE(float)
SAOT_INSTANTIATE(double)
#undef SAOT_INSTANTIATE

}  // namespace saot::kernels
