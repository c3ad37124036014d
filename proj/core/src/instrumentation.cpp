#include "hgformer/instrumentation.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "hgformer/errors.hpp"

namespace hgformer {
namespace {

using Clock = std::chrono::steady_clock;

struct ThreadState {
  OpStats stats;
  OpCategory category = OpCategory::other;
  Clock::time_point segment_start = Clock::now();
  AttentionAudit* audit = nullptr;

  void close_segment() {
    const auto now = Clock::now();
    stats.seconds[static_cast<std::size_t>(category)] +=
        std::chrono::duration<double>(now - segment_start).count();
    segment_start = now;
  }
};

ThreadState& state() {
  thread_local ThreadState s;
  return s;
}

std::atomic<FaultSite> g_fault{FaultSite::none};

}  // namespace

std::string_view to_string(OpCategory c) {
  switch (c) {
    case OpCategory::other: return "other";
    case OpCategory::construction: return "construction";
    case OpCategory::messaging: return "messaging";
    case OpCategory::projection: return "projection";
    case OpCategory::count_: break;
  }
  return "unknown";
}

OpStats& OpStats::operator+=(const OpStats& other) {
  for (std::size_t i = 0; i < kOpCategoryCount; ++i) {
    flops[i] += other.flops[i];
    seconds[i] += other.seconds[i];
  }
  return *this;
}

OpStats thread_op_stats() {
  auto& s = state();
  s.close_segment();
  return s.stats;
}

void reset_thread_op_stats() {
  auto& s = state();
  s.stats = OpStats{};
  s.segment_start = Clock::now();
}

void count_flops(std::uint64_t macs) {
  auto& s = state();
  s.stats.flops[static_cast<std::size_t>(s.category)] += macs;
}

OpCategory current_op_category() { return state().category; }

OpCategoryScope::OpCategoryScope(OpCategory category) {
  auto& s = state();
  s.close_segment();
  previous_ = s.category;
  s.category = category;
}

OpCategoryScope::~OpCategoryScope() {
  auto& s = state();
  s.close_segment();
  s.category = previous_;
}

AttentionAudit::AttentionAudit() : previous_(state().audit) { state().audit = this; }

AttentionAudit::~AttentionAudit() { state().audit = previous_; }

void AttentionAudit::record(const double* row_sums, std::size_t n_rows) {
  AttentionAudit* audit = state().audit;
  if (audit == nullptr) return;
  audit->matrices_ += 1;
  audit->rows_ += n_rows;
  for (std::size_t i = 0; i < n_rows; ++i) {
    const double err = std::abs(row_sums[i] - 1.0);
    if (!(err <= audit->max_error_)) audit->max_error_ = err;  // NaN propagates
  }
}

void set_fault(FaultSite site) { g_fault.store(site); }

FaultSite active_fault() { return g_fault.load(std::memory_order_relaxed); }

FaultSite parse_fault_site(std::string_view name) {
  if (name == "none") return FaultSite::none;
  if (name == "gelu") return FaultSite::gelu_backward;
  if (name == "matmul") return FaultSite::matmul_backward;
  if (name == "softmax") return FaultSite::softmax_backward;
  if (name == "layer_norm") return FaultSite::layer_norm_backward;
  throw ConfigError("unknown fault site '" + std::string(name) +
                    "' (expected none, gelu, matmul, softmax, layer_norm)");
}

}  // namespace hgformer
