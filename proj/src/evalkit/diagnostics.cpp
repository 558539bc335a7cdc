// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/evalkit/diagnostics.hpp"

#include <stdexcept>

namespace freqdyn::evalkit {

double attention_variance(const VectorSet& w) {
  if (w.rows() < 2) throw std::invalid_argument("attention_variance: need at least 2 vectors");
  const Eigen::RowVectorXd mean = w.colwise().mean();
  return (w.rowwise() - mean).rowwise().squaredNorm().mean();
}

PcaResult pca_project(const VectorSet& w) {
  if (w.rows() < 3) throw std::invalid_argument("pca_project: need at least 3 vectors");
  if (w.cols() < 2) throw std::invalid_argument("pca_project: vectors need at least 2 dimensions");
  const Eigen::MatrixXd centred = w.rowwise() - w.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(w.rows());
  const double total = cov.trace();
  if (!(total > 1e-300)) throw std::domain_error("pca_project: data has rank 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca_project: eigensolver failed");
  const Eigen::Index K = cov.rows();
  PcaResult r;
  r.components.resize(K, 2);
  for (int k = 0; k < 2; ++k) {
    // eigenvalues come in increasing order
    Eigen::VectorXd v = es.eigenvectors().col(K - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.col(k) = v;
    r.explained(k) = std::max(0.0, es.eigenvalues()(K - 1 - k));
  }
  r.ratio = r.explained / total;
  r.coords = centred * r.components;
  return r;
}

template <class T>
AttentionVectors gather_attention(const std::vector<typename nn::AttentionRecorder<T>::Entry>& entries) {
  AttentionVectors out;
  for (const auto& e : entries) {
    require_rank(e.pi, 4, "gather_attention");
    const std::size_t B = e.pi.dim(0), K = e.pi.dim(1), F = e.pi.dim(2);
    auto& sets = out[{e.layer, e.branch}];
    if (sets.empty()) sets.assign(F, VectorSet(0, static_cast<Eigen::Index>(K)));
    if (sets.size() != F || static_cast<std::size_t>(sets[0].cols()) != K) {
      throw ShapeError("gather_attention: inconsistent recordings for one layer");
    }
    for (std::size_t f = 0; f < F; ++f) {
      VectorSet& m = sets[f];
      const Eigen::Index base = m.rows();
      m.conservativeResize(base + static_cast<Eigen::Index>(B), Eigen::NoChange);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < K; ++k) {
          m(base + static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) =
              static_cast<double>(e.pi.at(b, k, f, 0));
        }
      }
    }
  }
  return out;
}

template AttentionVectors gather_attention<float>(
    const std::vector<nn::AttentionRecorder<float>::Entry>&);
template AttentionVectors gather_attention<double>(
    const std::vector<nn::AttentionRecorder<double>::Entry>&);

}  // namespace freqdyn::evalkit
