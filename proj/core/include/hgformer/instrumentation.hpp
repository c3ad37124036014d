#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string_view>

// Thread-local counters used by the benchmark harness and by test-only audits.
// Nothing here changes numerical results.
namespace hgformer {

enum class OpCategory : std::size_t {
  other = 0,
  construction,  // hypergraph building: scoring, distances, selection
  messaging,     // hyperedge/node aggregation and attention core (QK^T, AV)
  projection,    // dense channel mixing: W, W^q/W^k/W^v, feed-forward
  count_
};

inline constexpr std::size_t kOpCategoryCount = static_cast<std::size_t>(OpCategory::count_);

std::string_view to_string(OpCategory c);

struct OpStats {
  std::array<std::uint64_t, kOpCategoryCount> flops{};
  std::array<double, kOpCategoryCount> seconds{};

  std::uint64_t flops_of(OpCategory c) const { return flops[static_cast<std::size_t>(c)]; }
  double seconds_of(OpCategory c) const { return seconds[static_cast<std::size_t>(c)]; }
  OpStats& operator+=(const OpStats& other);
};

// Statistics of the calling thread since the last reset.
OpStats thread_op_stats();
void reset_thread_op_stats();

// Adds multiply-accumulate counts to the calling thread's current category.
void count_flops(std::uint64_t macs);
OpCategory current_op_category();

// Attributes work (flops and exclusive wall time) inside its lifetime to `category`.
class OpCategoryScope {
 public:
  explicit OpCategoryScope(OpCategory category);
  ~OpCategoryScope();
  OpCategoryScope(const OpCategoryScope&) = delete;
  OpCategoryScope& operator=(const OpCategoryScope&) = delete;

 private:
  OpCategory previous_;
};

// While alive on a thread, every attention probability matrix produced on that
// thread is checked for unit row sums; the worst deviation is recorded.
class AttentionAudit {
 public:
  AttentionAudit();
  ~AttentionAudit();
  AttentionAudit(const AttentionAudit&) = delete;
  AttentionAudit& operator=(const AttentionAudit&) = delete;

  std::size_t rows_checked() const { return rows_; }
  std::size_t matrices_checked() const { return matrices_; }
  double max_row_sum_error() const { return max_error_; }

  // Called by the attention kernel.
  static void record(const double* row_sums, std::size_t n_rows);

 private:
  AttentionAudit* previous_;
  std::size_t rows_ = 0;
  std::size_t matrices_ = 0;
  double max_error_ = 0.0;
};

// Deliberate corruption of a backward rule; exists so the gradient checker can
// be shown to catch a broken derivative. Process-wide.
enum class FaultSite { none, gelu_backward, matmul_backward, softmax_backward, layer_norm_backward };

void set_fault(FaultSite site);
FaultSite active_fault();
FaultSite parse_fault_site(std::string_view name);

}  // namespace hgformer
