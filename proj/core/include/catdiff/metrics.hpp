#pragma once

#include <span>
#include <vector>

#include "catdiff/tensor.hpp"

namespace catdiff {

class TeacherEncoder;

/// Fixed-width bins over [lo, hi]; the last bin is closed.
struct Histogram {
  float lo = -1.0f;
  float hi = 1.0f;
  std::vector<std::size_t> counts;
};

struct SimilarityHistograms {
  Histogram before;
  Histogram after;
  float mean_before = 0.0f;
  float mean_after = 0.0f;
};

SimilarityHistograms similarity_histogram(std::span<const float> before, std::span<const float> after,
                                          std::size_t bins);

/// Mean and unbiased covariance of a sample of d-dimensional rows.
struct GaussianStats {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<double> mean;        // [d]
  std::vector<double> covariance;  // [d×d], row-major

  /// `rows` holds count·dim values, one sample per row.
  static GaussianStats from_rows(std::span<const float> rows, std::size_t dim);
};

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}) with S = cov + 1e-6·I.
/// The cross term is computed as Tr sqrt(sqrt(S1) S2 sqrt(S1)) by symmetric
/// eigendecomposition; negative eigenvalues are clipped to zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct FidResult {
  double value = 0.0;
  std::size_t samples = 0;
  bool unstable = false;  // fewer than 64 pooled feature rows
};

/// Fréchet distance between teacher patch features of real and inpainted
/// images, restricted to the patches covered by each image's mask.
FidResult local_fid_proxy(std::span<const Tensor> real, std::span<const Tensor> inpainted,
                          std::span<const Tensor> masks, const TeacherEncoder& teacher);

/// Same over all patches of every image.
FidResult fid_proxy(std::span<const Tensor> real, std::span<const Tensor> inpainted, const TeacherEncoder& teacher);

/// max |x − output| over pixels with m = 0 (0 if the mask covers everything).
float background_preservation(const Tensor& x, const Tensor& output, const Tensor& mask);

/// Alignment between the masked region of an image and a class prompt:
/// cosine(normalize(mean masked-patch feature), text embedding).
float region_alignment(const TeacherEncoder& teacher, const Tensor& image, const Tensor& mask, std::size_t class_id);

}  // namespace catdiff
