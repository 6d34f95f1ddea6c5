#include "catdiff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "catdiff/data.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/teacher.hpp"

namespace catdiff {

namespace {

constexpr double kCovarianceJitter = 1e-6;
constexpr std::size_t kMinStableSamples = 64;

Histogram make_histogram(std::span<const float> values, std::size_t bins) {
  Histogram h;
  h.counts.assign(bins, 0);
  const float width = (h.hi - h.lo) / static_cast<float>(bins);
  for (float v : values) {
    if (!(v >= h.lo && v <= h.hi)) throw ContractError("similarity_histogram: value outside [-1, 1]");
    auto bin = static_cast<std::size_t>((v - h.lo) / width);
    h.counts[std::min(bin, bins - 1)]++;
  }
  return h;
}

float mean_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += x;
  return static_cast<float>(s / static_cast<double>(v.size()));
}

Eigen::MatrixXd regularized_cov(const GaussianStats& s) {
  Eigen::MatrixXd m(s.dim, s.dim);
  for (std::size_t i = 0; i < s.dim; ++i)
    for (std::size_t j = 0; j < s.dim; ++j) m(i, j) = s.covariance[i * s.dim + j];
  m = 0.5 * (m + m.transpose());
  m.diagonal().array() += kCovarianceJitter;
  return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

void require_pairs(std::span<const Tensor> real, std::span<const Tensor> inpainted) {
  if (real.size() != inpainted.size() || real.empty())
    throw ContractError("fid: need equal, nonzero numbers of real and inpainted images");
}

void append_rows(std::vector<float>& out, const Tensor& features, const Tensor* grid) {
  const std::size_t n = features.dim(0), d = features.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    if (!grid || (*grid)[i] != 0.0f) out.insert(out.end(), features.ptr() + i * d, features.ptr() + (i + 1) * d);
}

FidResult finish(const std::vector<float>& a, const std::vector<float>& b, std::size_t d) {
  if (a.size() < 2 * d || b.size() < 2 * d) throw ContractError("fid: fewer than two feature rows per set");
  FidResult r;
  r.samples = std::min(a.size(), b.size()) / d;
  r.unstable = r.samples < kMinStableSamples;
  r.value = frechet_distance(GaussianStats::from_rows(a, d), GaussianStats::from_rows(b, d));
  return r;
}

std::size_t patch_of(const TeacherEncoder& t) { return t.config().patch; }

}  // namespace

SimilarityHistograms similarity_histogram(std::span<const float> before, std::span<const float> after,
                                          std::size_t bins) {
  if (before.empty() || after.empty()) throw ContractError("similarity_histogram: empty input");
  if (before.size() != after.size()) throw ContractError("similarity_histogram: lists differ in length");
  if (bins == 0) throw ContractError("similarity_histogram: need at least one bin");
  return SimilarityHistograms{make_histogram(before, bins), make_histogram(after, bins), mean_of(before),
                              mean_of(after)};
}

GaussianStats GaussianStats::from_rows(std::span<const float> rows, std::size_t dim) {
  if (dim == 0 || rows.size() % dim != 0) throw ContractError("GaussianStats: row data not a multiple of dim");
  GaussianStats s;
  s.dim = dim;
  s.count = rows.size() / dim;
  if (s.count < 2) throw ContractError("GaussianStats: need at least two samples");
  s.mean.assign(dim, 0.0);
  for (std::size_t n = 0; n < s.count; ++n)
    for (std::size_t j = 0; j < dim; ++j) s.mean[j] += rows[n * dim + j];
  for (auto& m : s.mean) m /= static_cast<double>(s.count);
  s.covariance.assign(dim * dim, 0.0);
  std::vector<double> c(dim);
  for (std::size_t n = 0; n < s.count; ++n) {
    for (std::size_t j = 0; j < dim; ++j) c[j] = rows[n * dim + j] - s.mean[j];
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i; j < dim; ++j) s.covariance[i * dim + j] += c[i] * c[j];
  }
  const double denom = static_cast<double>(s.count - 1);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i; j < dim; ++j) {
      s.covariance[i * dim + j] /= denom;
      s.covariance[j * dim + i] = s.covariance[i * dim + j];
    }
  return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim != b.dim || a.dim == 0)
    throw ContractError("frechet_distance: dimension mismatch " + std::to_string(a.dim) + " vs " +
                        std::to_string(b.dim));
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Eigen::MatrixXd s1 = regularized_cov(a);
  const Eigen::MatrixXd s2 = regularized_cov(b);
  const Eigen::MatrixXd root1 = psd_sqrt(s1);
  Eigen::MatrixXd inner = root1 * s2 * root1;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

FidResult local_fid_proxy(std::span<const Tensor> real, std::span<const Tensor> inpainted,
                          std::span<const Tensor> masks, const TeacherEncoder& teacher) {
  require_pairs(real, inpainted);
  if (masks.size() != real.size()) throw ContractError("local_fid_proxy: one mask per image required");
  const std::size_t d = teacher.config().width;
  std::vector<float> a, b;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const Tensor grid = mask_to_patch_grid(masks[i], patch_of(teacher));
    append_rows(a, teacher.encode_image_patches(real[i]), &grid);
    append_rows(b, teacher.encode_image_patches(inpainted[i]), &grid);
  }
  return finish(a, b, d);
}

FidResult fid_proxy(std::span<const Tensor> real, std::span<const Tensor> inpainted, const TeacherEncoder& teacher) {
  require_pairs(real, inpainted);
  const std::size_t d = teacher.config().width;
  std::vector<float> a, b;
  for (std::size_t i = 0; i < real.size(); ++i) {
    append_rows(a, teacher.encode_image_patches(real[i]), nullptr);
    append_rows(b, teacher.encode_image_patches(inpainted[i]), nullptr);
  }
  return finish(a, b, d);
}

float background_preservation(const Tensor& x, const Tensor& output, const Tensor& mask) {
  if (x.shape() != output.shape())
    throw ContractError("background_preservation: shape mismatch " + shape_str(x.shape()) + " vs " +
                        shape_str(output.shape()));
  const std::size_t plane = mask.numel();
  if (x.numel() % plane != 0) throw ContractError("background_preservation: mask does not tile the image");
  float worst = 0.0f;
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (mask[i % plane] == 0.0f) worst = std::max(worst, std::abs(x[i] - output[i]));
  return worst;
}

float region_alignment(const TeacherEncoder& teacher, const Tensor& image, const Tensor& mask, std::size_t class_id) {
  const Tensor features = teacher.encode_image_patches(image);
  const Tensor grid = mask_to_patch_grid(mask, patch_of(teacher));
  std::vector<float> rows;
  append_rows(rows, features, &grid);
  const std::size_t d = features.dim(1);
  if (rows.empty()) throw ContractError("region_alignment: mask covers no patch");
  const Tensor region = mean_rows(Tensor({rows.size() / d, d}, rows));
  return alignment_score(region, teacher.encode_text(class_id));
}

}  // namespace catdiff
