#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cotag/gf256.hpp"
#include "cotag/random.hpp"

namespace cotag {

using FlowId = std::uint32_t;
using CohortLabel = std::int64_t;
using Bytes = std::vector<std::uint8_t>;

enum class Priority : std::uint8_t { Low = 0, High = 1 };

const char* to_string(Priority p) noexcept;

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Source packets of one flow within one cohort.
///
/// Each source payload is stored as a framed block: a 2-byte big-endian
/// length followed by the payload and zero padding up to the longest payload
/// of the generation. The frame lets a decoder restore the exact lengths.
class Generation {
 public:
  static constexpr std::size_t kFrameHeader = 2;

  Generation(FlowId flow, CohortLabel cohort, std::span<const Bytes> payloads);

  FlowId flow() const noexcept { return flow_; }
  CohortLabel cohort() const noexcept { return cohort_; }
  std::size_t size() const noexcept { return blocks_.size(); }
  std::size_t block_size() const noexcept { return block_size_; }
  std::span<const std::uint8_t> block(std::size_t i) const { return blocks_.at(i); }

 private:
  FlowId flow_;
  CohortLabel cohort_;
  std::size_t block_size_ = 0;
  std::vector<Bytes> blocks_;
};

/// Strips the length frame off a decoded block.
Bytes unframe(std::span<const std::uint8_t> block);

struct CodedPacket {
  FlowId flow_id = 0;
  CohortLabel cohort = 0;
  Priority priority = Priority::High;
  std::vector<FieldElement> coefficients;  // length = generation size
  Bytes payload;                           // one framed block
  /// Size the packet occupies on a simulated link; independent of the
  /// payload actually carried.
  std::uint32_t wire_bytes = 0;

  std::size_t generation_size() const noexcept { return coefficients.size(); }
};

/// Uniform coefficients over GF(2^8), redrawn if all zero.
std::vector<FieldElement> random_coefficients(std::size_t g, Rng& rng);

/// Linear combination of the generation's blocks. Throws ContractViolation on
/// a length mismatch.
CodedPacket encode(const Generation& gen, std::span<const FieldElement> coeffs,
                   Priority priority = Priority::High);

/// Combines already coded packets of one generation. The result's
/// coefficients are expressed over the original source blocks.
CodedPacket recode(std::span<const CodedPacket* const> inputs,
                   std::span<const FieldElement> weights, Priority priority);

/// recode() with uniformly random weights (not all zero).
CodedPacket recode_random(std::span<const CodedPacket* const> inputs,
                          Priority priority, Rng& rng);

enum class InsertResult { Innovative, Redundant };

/// Incremental Gauss-Jordan elimination over one generation. Rows are kept in
/// reduced row echelon form indexed by pivot column.
class Decoder {
 public:
  Decoder(FlowId flow, CohortLabel cohort, std::size_t generation_size);

  /// Throws ContractViolation if the packet belongs to another generation or
  /// its payload length differs from earlier packets.
  InsertResult insert(const CodedPacket& pkt);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t generation_size() const noexcept { return g_; }
  bool complete() const noexcept { return rank_ == g_; }

  /// Source payloads in source order (frames removed), or nullopt while the
  /// rank is deficient.
  std::optional<std::vector<Bytes>> extract() const;

 private:
  FlowId flow_;
  CohortLabel cohort_;
  std::size_t g_;
  std::size_t rank_ = 0;
  std::optional<std::size_t> payload_len_;
  std::vector<std::vector<FieldElement>> coeff_rows_;  // by pivot column
  std::vector<Bytes> payload_rows_;
  std::vector<bool> has_pivot_;
};

/// Trace-dump layout, big-endian:
/// flow_id(4) | cohort(8) | g(2) | priority(1) | g coefficients | payload.
Bytes serialize(const CodedPacket& pkt);
CodedPacket deserialize(std::span<const std::uint8_t> bytes);

}  // namespace cotag
