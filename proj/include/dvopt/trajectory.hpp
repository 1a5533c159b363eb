#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/se3.hpp"

namespace dvopt {

// Timestamped camera-to-world poses with strictly increasing timestamps.
struct TrajectoryEntry {
  double timestamp = 0.0;
  PoseSE3 pose;  // camera-to-world
};

class Trajectory {
 public:
  void append(double timestamp, const PoseSE3& pose) {
    if (!entries_.empty() && timestamp <= entries_.back().timestamp) {
      throw std::invalid_argument(
          "Trajectory: timestamps must be strictly increasing (got " +
          std::to_string(timestamp) + " after " +
          std::to_string(entries_.back().timestamp) + ")");
    }
    entries_.push_back({timestamp, pose});
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const TrajectoryEntry& operator[](size_t i) const { return entries_[i]; }
  const std::vector<TrajectoryEntry>& entries() const { return entries_; }

  // Index of the entry whose timestamp is nearest to t, or -1 when the
  // nearest one is further than max_dt.
  int find_nearest(double t, double max_dt) const {
    int best = -1;
    double best_dt = max_dt;
    for (size_t i = 0; i < entries_.size(); ++i) {
      const double dt = std::abs(entries_[i].timestamp - t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = static_cast<int>(i);
      }
    }
    return best;
  }

 private:
  std::vector<TrajectoryEntry> entries_;
};

}  // namespace dvopt
