#pragma once

// Progressive Proposal Stabilizing: sigmoid-scheduled confidence pruning,
// history-weighted fusion with a per-frame memory bank, and NMS over the
// reweighted union.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ums/geometry.hpp"
#include "ums/ppf.hpp"  // sigmoid

namespace ums {

struct ScheduleParams {
  double tau_min = 0.01;
  double tau_max = 0.20;
  double k_tau = 0.5;
  double k_lambda = 0.5;
  double beta_tau = 10.0;
  double beta_lambda = 10.0;

  void validate() const {
    if (!(tau_min < tau_max) || tau_min < 0.0 || tau_max > 1.0) {
      throw std::invalid_argument("ScheduleParams: need 0 <= tau_min < tau_max <= 1");
    }
    if (k_tau <= 0.0 || k_lambda <= 0.0) {
      throw std::invalid_argument("ScheduleParams: slopes must be positive");
    }
  }
};

/// tau_t = tau_min + (tau_max - tau_min) * sigmoid(k_tau (t - beta_tau)).
/// Evaluated in the centered form mid + range * (s - 1/2) so that
/// t == beta_tau yields the midpoint (tau_min + tau_max) / 2 bit-exactly;
/// the clamp keeps saturated values inside [tau_min, tau_max].
inline double dynamic_tau(int t, const ScheduleParams& p) {
  const double s = sigmoid(p.k_tau * (t - p.beta_tau));
  const double tau = (p.tau_min + p.tau_max) / 2.0 + (p.tau_max - p.tau_min) * (s - 0.5);
  return std::min(p.tau_max, std::max(p.tau_min, tau));
}

/// lambda_t = sigmoid(k_lambda (t - beta_lambda)): weight of history.
inline double dynamic_lambda(int t, const ScheduleParams& p) {
  return sigmoid(p.k_lambda * (t - p.beta_lambda));
}

/// Per-frame store of previously stabilized proposals with their historical
/// (un-reweighted) confidences. One entry per frame id; stabilize replaces it.
struct MemoryBank {
  std::map<std::string, std::vector<Proposal>> entries;

  const std::vector<Proposal>* find(const std::string& frame_id) const {
    auto it = entries.find(frame_id);
    return it == entries.end() ? nullptr : &it->second;
  }
};

/// Prune at the scheduled threshold, blend current proposals at (1 - lambda_t)
/// against bank entries at lambda_t, fuse via NMS, and store the survivors
/// back in the bank with their original confidences.
inline ProposalSet stabilize(const ProposalSet& filtered, MemoryBank& bank, int t,
                             const ScheduleParams& p, double eta) {
  p.validate();
  const double tau = dynamic_tau(t, p);
  const double lambda = dynamic_lambda(t, p);

  ProposalSet unioned;
  unioned.frame_id = filtered.frame_id;
  unioned.view = filtered.view;
  std::vector<double> original_conf;
  for (const Proposal& pr : filtered.items) {
    if (pr.confidence < tau) continue;
    unioned.items.push_back({pr.box, (1.0 - lambda) * pr.confidence});
    original_conf.push_back(pr.confidence);
  }
  if (const auto* hist = bank.find(filtered.frame_id)) {
    for (const Proposal& pr : *hist) {
      unioned.items.push_back({pr.box, lambda * pr.confidence});
      original_conf.push_back(pr.confidence);
    }
  }

  // NMS on reweighted confidences; track survivors to recover originals.
  ProposalSet stabilized = nms(unioned, eta);
  std::vector<Proposal> bank_entry;
  std::vector<char> used(unioned.items.size(), 0);
  for (const Proposal& surv : stabilized.items) {
    for (size_t i = 0; i < unioned.items.size(); ++i) {
      if (used[i]) continue;
      const Proposal& u = unioned.items[i];
      if (u.confidence == surv.confidence && u.box.cx == surv.box.cx &&
          u.box.cy == surv.box.cy && u.box.yaw == surv.box.yaw) {
        bank_entry.push_back({u.box, original_conf[i]});
        used[i] = 1;
        break;
      }
    }
  }
  bank.entries[filtered.frame_id] = std::move(bank_entry);
  return stabilized;
}

}  // namespace ums
