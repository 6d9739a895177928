#include "cotag/rlnc.hpp"

#include <algorithm>
#include <string>

namespace cotag {

const char* to_string(Priority p) noexcept {
  return p == Priority::High ? "high" : "low";
}

Generation::Generation(FlowId flow, CohortLabel cohort,
                       std::span<const Bytes> payloads)
    : flow_(flow), cohort_(cohort) {
  if (payloads.empty()) throw ContractViolation("generation must be non-empty");
  if (cohort < 0) throw ContractViolation("cohort label must be non-negative");
  std::size_t longest = 0;
  for (const auto& p : payloads) {
    if (p.size() > 0xFFFF) throw ContractViolation("payload exceeds 65535 bytes");
    longest = std::max(longest, p.size());
  }
  block_size_ = kFrameHeader + longest;
  blocks_.reserve(payloads.size());
  for (const auto& p : payloads) {
    Bytes b(block_size_, 0);
    b[0] = static_cast<std::uint8_t>(p.size() >> 8);
    b[1] = static_cast<std::uint8_t>(p.size() & 0xFF);
    std::copy(p.begin(), p.end(), b.begin() + kFrameHeader);
    blocks_.push_back(std::move(b));
  }
}

Bytes unframe(std::span<const std::uint8_t> block) {
  if (block.size() < Generation::kFrameHeader)
    throw ContractViolation("block shorter than its frame header");
  const std::size_t len = (std::size_t{block[0]} << 8) | block[1];
  if (Generation::kFrameHeader + len > block.size())
    throw ContractViolation("frame length exceeds block size");
  return Bytes(block.begin() + Generation::kFrameHeader,
               block.begin() + Generation::kFrameHeader + len);
}

std::vector<FieldElement> random_coefficients(std::size_t g, Rng& rng) {
  std::vector<FieldElement> c(g);
  for (;;) {
    bool any = false;
    for (auto& x : c) {
      x = rng.byte();
      any |= x != 0;
    }
    if (any || g == 0) return c;
  }
}

CodedPacket encode(const Generation& gen, std::span<const FieldElement> coeffs,
                   Priority priority) {
  if (coeffs.size() != gen.size())
    throw ContractViolation("encode: coefficient count " +
                            std::to_string(coeffs.size()) +
                            " != generation size " + std::to_string(gen.size()));
  CodedPacket pkt;
  pkt.flow_id = gen.flow();
  pkt.cohort = gen.cohort();
  pkt.priority = priority;
  pkt.coefficients.assign(coeffs.begin(), coeffs.end());
  pkt.payload.assign(gen.block_size(), 0);
  for (std::size_t i = 0; i < gen.size(); ++i)
    gf_axpy(pkt.payload, gen.block(i), coeffs[i]);
  pkt.wire_bytes = static_cast<std::uint32_t>(pkt.payload.size());
  return pkt;
}

CodedPacket recode(std::span<const CodedPacket* const> inputs,
                   std::span<const FieldElement> weights, Priority priority) {
  if (inputs.empty()) throw ContractViolation("recode: no inputs");
  if (inputs.size() != weights.size())
    throw ContractViolation("recode: weight count mismatch");
  const CodedPacket& first = *inputs.front();
  CodedPacket out;
  out.flow_id = first.flow_id;
  out.cohort = first.cohort;
  out.priority = priority;
  out.wire_bytes = first.wire_bytes;
  out.coefficients.assign(first.generation_size(), 0);
  out.payload.assign(first.payload.size(), 0);
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const CodedPacket& in = *inputs[j];
    if (in.flow_id != first.flow_id || in.cohort != first.cohort ||
        in.generation_size() != first.generation_size() ||
        in.payload.size() != first.payload.size())
      throw ContractViolation("recode: inputs span different generations");
    gf_axpy(out.coefficients, in.coefficients, weights[j]);
    gf_axpy(out.payload, in.payload, weights[j]);
  }
  return out;
}

CodedPacket recode_random(std::span<const CodedPacket* const> inputs,
                          Priority priority, Rng& rng) {
  const auto w = random_coefficients(inputs.size(), rng);
  return recode(inputs, w, priority);
}

Decoder::Decoder(FlowId flow, CohortLabel cohort, std::size_t generation_size)
    : flow_(flow),
      cohort_(cohort),
      g_(generation_size),
      coeff_rows_(generation_size),
      payload_rows_(generation_size),
      has_pivot_(generation_size, false) {
  if (generation_size == 0) throw ContractViolation("generation size must be >= 1");
}

InsertResult Decoder::insert(const CodedPacket& pkt) {
  if (pkt.flow_id != flow_ || pkt.cohort != cohort_ || pkt.generation_size() != g_)
    throw ContractViolation("decoder: packet from a different generation");
  if (payload_len_ && *payload_len_ != pkt.payload.size())
    throw ContractViolation("decoder: payload length mismatch");
  if (rank_ == g_) return InsertResult::Redundant;

  auto c = pkt.coefficients;
  auto p = pkt.payload;
  for (std::size_t col = 0; col < g_; ++col) {
    if (c[col] != 0 && has_pivot_[col]) {
      const FieldElement f = c[col];
      gf_axpy(c, coeff_rows_[col], f);
      gf_axpy(p, payload_rows_[col], f);
    }
  }
  const auto it = std::find_if(c.begin(), c.end(), [](auto x) { return x != 0; });
  if (it == c.end()) return InsertResult::Redundant;

  const std::size_t pivot = static_cast<std::size_t>(it - c.begin());
  const FieldElement inv = gf_inv(c[pivot]);
  gf_scale(c, inv);
  gf_scale(p, inv);
  // Keep the echelon reduced: clear the new pivot column from existing rows.
  for (std::size_t r = 0; r < g_; ++r) {
    if (has_pivot_[r] && coeff_rows_[r][pivot] != 0) {
      const FieldElement f = coeff_rows_[r][pivot];
      gf_axpy(coeff_rows_[r], c, f);
      gf_axpy(payload_rows_[r], p, f);
    }
  }
  coeff_rows_[pivot] = std::move(c);
  payload_rows_[pivot] = std::move(p);
  has_pivot_[pivot] = true;
  payload_len_ = pkt.payload.size();
  ++rank_;
  return InsertResult::Innovative;
}

std::optional<std::vector<Bytes>> Decoder::extract() const {
  if (!complete()) return std::nullopt;
  std::vector<Bytes> out;
  out.reserve(g_);
  for (const auto& row : payload_rows_) out.push_back(unframe(row));
  return out;
}

namespace {

void put_be(Bytes& out, std::uint64_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_be(std::span<const std::uint8_t> in, std::size_t off, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v = (v << 8) | in[off + i];
  return v;
}

}  // namespace

Bytes serialize(const CodedPacket& pkt) {
  Bytes out;
  out.reserve(15 + pkt.coefficients.size() + pkt.payload.size());
  put_be(out, pkt.flow_id, 4);
  put_be(out, static_cast<std::uint64_t>(pkt.cohort), 8);
  put_be(out, pkt.coefficients.size(), 2);
  out.push_back(static_cast<std::uint8_t>(pkt.priority));
  out.insert(out.end(), pkt.coefficients.begin(), pkt.coefficients.end());
  out.insert(out.end(), pkt.payload.begin(), pkt.payload.end());
  return out;
}

CodedPacket deserialize(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kHeader = 15;
  if (bytes.size() < kHeader) throw std::invalid_argument("coded packet truncated");
  CodedPacket pkt;
  pkt.flow_id = static_cast<FlowId>(get_be(bytes, 0, 4));
  pkt.cohort = static_cast<CohortLabel>(get_be(bytes, 4, 8));
  const auto g = static_cast<std::size_t>(get_be(bytes, 12, 2));
  const auto prio = bytes[14];
  if (prio > 1) throw std::invalid_argument("coded packet: bad priority byte");
  pkt.priority = static_cast<Priority>(prio);
  if (bytes.size() < kHeader + g) throw std::invalid_argument("coded packet truncated");
  pkt.coefficients.assign(bytes.begin() + kHeader, bytes.begin() + kHeader + g);
  pkt.payload.assign(bytes.begin() + kHeader + g, bytes.end());
  pkt.wire_bytes = static_cast<std::uint32_t>(pkt.payload.size());
  return pkt;
}

}  // namespace cotag
