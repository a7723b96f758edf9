#include "vtu/staple.hpp"

#include "vtu/io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace vtu {

BinaryMask StapleResult::fused(double level) const {
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < posterior.size(); ++i) m.bits[i] = posterior[i] >= level ? 1 : 0;
  return m;
}

StapleResult staple(const std::vector<BinaryMask>& raters, const StapleOptions& opts) {
  if (raters.size() < 2) throw std::invalid_argument("staple: need at least two raters");
  const BinaryMask& first = raters.front();
  for (const auto& r : raters)
    if (r.height != first.height || r.width != first.width)
      throw ShapeError("staple: rater masks differ in extent");
  const std::size_t n = first.bits.size();
  const std::size_t num_raters = raters.size();

  StapleResult res;
  res.height = first.height;
  res.width = first.width;
  if (opts.prior < 0) {
    double votes = 0;
    for (const auto& r : raters) votes += double(r.count());
    res.prior = votes / double(num_raters * n);
  } else {
    res.prior = opts.prior;
  }
  // A degenerate all-background or all-foreground frame still needs a prior
  // strictly inside (0, 1).
  res.prior = std::clamp(res.prior, opts.clamp_lo, opts.clamp_hi);
  const double prior = res.prior;

  res.sensitivity.assign(num_raters, opts.init_quality);
  res.specificity.assign(num_raters, opts.init_quality);
  res.posterior.assign(n, prior);

  for (int it = 0; it < opts.max_iter; ++it) {
    // E-step in the log domain; a_j, b_j are the rater likelihoods under
    // true label 1 and 0 respectively.
    double loglik = 0;
    std::vector<double> log_p(num_raters), log_1mp(num_raters), log_q(num_raters), log_1mq(num_raters);
    for (std::size_t j = 0; j < num_raters; ++j) {
      log_p[j] = std::log(res.sensitivity[j]);
      log_1mp[j] = std::log1p(-res.sensitivity[j]);
      log_q[j] = std::log(res.specificity[j]);
      log_1mq[j] = std::log1p(-res.specificity[j]);
    }
    const double log_prior = std::log(prior), log_1mprior = std::log1p(-prior);
    for (std::size_t i = 0; i < n; ++i) {
      double la = log_prior, lb = log_1mprior;
      for (std::size_t j = 0; j < num_raters; ++j) {
        if (raters[j].bits[i]) {
          la += log_p[j];
          lb += log_1mq[j];
        } else {
          la += log_1mp[j];
          lb += log_q[j];
        }
      }
      const double m = std::max(la, lb);
      const double ea = std::exp(la - m), eb = std::exp(lb - m);
      res.posterior[i] = ea / (ea + eb);
      loglik += m + std::log(ea + eb);
    }
    res.log_likelihood.push_back(loglik);

    // M-step.
    double w_sum = 0, bg_sum = 0;
    for (double w : res.posterior) {
      w_sum += w;
      bg_sum += 1.0 - w;
    }
    double max_change = 0;
    for (std::size_t j = 0; j < num_raters; ++j) {
      double tp = 0, tn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = res.posterior[i];
        if (raters[j].bits[i])
          tp += w;
        else
          tn += 1.0 - w;
      }
      const double p = std::clamp(w_sum > 0 ? tp / w_sum : res.sensitivity[j], opts.clamp_lo, opts.clamp_hi);
      const double q = std::clamp(bg_sum > 0 ? tn / bg_sum : res.specificity[j], opts.clamp_lo, opts.clamp_hi);
      max_change = std::max({max_change, std::abs(p - res.sensitivity[j]), std::abs(q - res.specificity[j])});
      res.sensitivity[j] = p;
      res.specificity[j] = q;
    }
    res.iterations = it + 1;
    if (max_change < opts.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

FuseSummary fuse_dataset(const std::vector<std::filesystem::path>& rater_dirs, const std::filesystem::path& out_dir,
                         const StapleOptions& opts) {
  namespace fs = std::filesystem;
  if (rater_dirs.size() < 2) throw std::invalid_argument("fuse_dataset: need at least two rater directories");
  for (const auto& d : rater_dirs)
    if (!fs::is_directory(d)) throw std::runtime_error("rater directory not found: " + d.string());

  // Frame ids present in the first rater, sorted for deterministic output.
  std::set<std::string> frames;
  for (const auto& entry : fs::directory_iterator(rater_dirs.front())) {
    const std::string name = entry.path().filename().string();
    for (const char* inst : kInstances) {
      const std::string suffix = std::string("_") + inst + ".pgm";
      if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        frames.insert(name.substr(0, name.size() - suffix.size()));
    }
  }
  if (frames.empty()) throw std::runtime_error("no <frame>_<instance>.pgm masks in " + rater_dirs.front().string());

  FuseSummary summary;
  fs::create_directories(out_dir);
  for (const auto& frame : frames) {
    for (const char* inst : kInstances) {
      const std::string file = frame + "_" + inst;
      std::vector<BinaryMask> masks;
      for (const auto& d : rater_dirs) {
        const fs::path p = d / (file + ".pgm");
        if (!fs::exists(p)) throw std::runtime_error("missing rater mask " + p.string());
        masks.push_back(threshold(read_mask_pgm(p)));
      }
      const StapleResult res = staple(masks, opts);
      if (!res.converged) ++summary.non_converged;
      write_mask_pgm(out_dir / (file + ".pgm"), to_tensor(res.fused()));
      std::vector<float> post(res.posterior.begin(), res.posterior.end());
      write_vtt1(out_dir / (file + ".vtt1"), Tensorf({res.height, res.width}, std::move(post)));
      ++summary.masks_written;
    }
    ++summary.frames;
  }
  return summary;
}

}  // namespace vtu
