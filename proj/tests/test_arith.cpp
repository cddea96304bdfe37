#include <cstdint>
#include <string>
#include <vector>

#include "cdraw/arith.h"
#include "cdraw/error.h"
#include "cdraw/rng.h"
#include "doctest.h"

namespace {

// Deterministic scale-to-2^16 of positive counts; shared by the encode and
// decode sides of the adaptive fuzz so both build identical tables.
cdraw::FreqTable scaled_table(const std::vector<uint32_t>& counts) {
  uint64_t total = 0;
  for (uint32_t c : counts) total += c;
  const uint32_t n = static_cast<uint32_t>(counts.size());
  const uint64_t budget = cdraw::FreqTable::kFreqTotal - n;
  std::vector<uint32_t> freq(counts.size());
  uint64_t assigned = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    const uint64_t share = budget * counts[i] / total;
    freq[i] = 1 + static_cast<uint32_t>(share);
    assigned += share;
  }
  freq[0] += static_cast<uint32_t>(budget - assigned);
  return cdraw::FreqTable::from(freq);
}

}  // namespace

TEST_CASE("a certain symbol costs almost nothing") {
  const auto table = cdraw::FreqTable::from({65536});
  cdraw::ArithEncoder enc;
  for (int i = 0; i < 50; ++i) enc.encode(0, table);
  const std::string payload = enc.finish();
  CHECK(payload.size() <= 4);
  CHECK(enc.ideal_bits() == doctest::Approx(0.0));
  cdraw::ArithDecoder dec(payload);
  for (int i = 0; i < 50; ++i) REQUIRE(dec.decode(table) == 0);
}

TEST_CASE("fair coins cost one bit each plus a bounded flush") {
  const auto table = cdraw::FreqTable::from({32768, 32768});
  cdraw::Rng rng(4242);
  const int n = 4096;
  std::vector<int> bits(n);
  for (int& b : bits) b = static_cast<int>(rng.next_u64() & 1);

  cdraw::ArithEncoder enc;
  for (int b : bits) enc.encode(b, table);
  CHECK(enc.ideal_bits() == doctest::Approx(static_cast<double>(n)));
  const std::string payload = enc.finish();
  CHECK(enc.bit_count() <= static_cast<size_t>(n) + 32);

  cdraw::ArithDecoder dec(payload);
  for (int i = 0; i < n; ++i) REQUIRE(dec.decode(table) == bits[i]);
}

TEST_CASE("hand-computed three-symbol message stays within the flush bound") {
  // p(A) = 1/2, p(B) = p(C) = 1/4; message A,B,C has ideal length
  // 1 + 2 + 2 = 5 bits.
  const auto table = cdraw::FreqTable::from({32768, 16384, 16384});
  cdraw::ArithEncoder enc;
  enc.encode(0, table);
  enc.encode(1, table);
  enc.encode(2, table);
  CHECK(enc.ideal_bits() == doctest::Approx(5.0));
  const std::string payload = enc.finish();
  CHECK(enc.bit_count() <= 37);

  cdraw::ArithDecoder dec(payload);
  CHECK(dec.decode(table) == 0);
  CHECK(dec.decode(table) == 1);
  CHECK(dec.decode(table) == 2);
}

TEST_CASE("adaptive models round-trip exactly") {
  cdraw::Rng rng(99);
  for (int seq = 0; seq < 10000; ++seq) {
    const int m = 2 + static_cast<int>(rng.next_u64() % 39);
    const int len = 1 + static_cast<int>(rng.next_u64() % 30);
    const bool adaptive = (rng.next_u64() & 1) != 0;

    std::vector<uint32_t> counts(m);
    for (auto& c : counts) c = 1 + static_cast<uint32_t>(rng.next_u64() % 50);
    const std::vector<uint32_t> counts0 = counts;

    std::vector<int> symbols(len);
    cdraw::ArithEncoder enc;
    for (int t = 0; t < len; ++t) {
      const auto table = scaled_table(counts);
      // Sample roughly from the model so typical and rare symbols both occur.
      const int s = static_cast<int>(rng.next_u64() % m);
      symbols[t] = s;
      enc.encode(s, table);
      if (adaptive) counts[s] += 8;
    }
    const std::string payload = enc.finish();
    CHECK(enc.bit_count() <= enc.ideal_bits() + 32);

    counts = counts0;
    cdraw::ArithDecoder dec(payload);
    for (int t = 0; t < len; ++t) {
      const auto table = scaled_table(counts);
      const int s = dec.decode(table);
      REQUIRE(s == symbols[t]);
      if (adaptive) counts[s] += 8;
    }
  }
}

TEST_CASE("empty message round-trips") {
  cdraw::ArithEncoder enc;
  const std::string payload = enc.finish();
  CHECK(payload.size() <= 1);
  CHECK_NOTHROW(cdraw::ArithDecoder dec(payload));
}

TEST_CASE("truncated payloads fail loudly") {
  const auto table = cdraw::FreqTable::from({32768, 32768});
  cdraw::Rng rng(5);
  cdraw::ArithEncoder enc;
  std::vector<int> bits(2000);
  for (int& b : bits) {
    b = static_cast<int>(rng.next_u64() & 1);
    enc.encode(b, table);
  }
  std::string payload = enc.finish();
  payload.resize(payload.size() / 2);

  cdraw::ArithDecoder dec(payload);
  CHECK_THROWS_AS(
      {
        for (int i = 0; i < 2000; ++i) (void)dec.decode(table);
      },
      cdraw::CorruptStream);
}

TEST_CASE("coding a symbol outside the table is a contract violation") {
  const auto table = cdraw::FreqTable::from({32768, 16384, 16384});
  cdraw::ArithEncoder enc;
  CHECK_THROWS_AS(enc.encode(3, table), cdraw::ContractError);
  CHECK_THROWS_AS(enc.encode(-1, table), cdraw::ContractError);
}

TEST_CASE("frequency tables are validated") {
  CHECK_THROWS_AS(cdraw::FreqTable::from({}), cdraw::ContractError);
  CHECK_THROWS_AS(cdraw::FreqTable::from({65535, 0, 1}), cdraw::ContractError);
  CHECK_THROWS_AS(cdraw::FreqTable::from({100, 100}), cdraw::ContractError);
  CHECK_THROWS_AS(cdraw::FreqTable::from({65536, 1}), cdraw::ContractError);
  const auto t = cdraw::FreqTable::from({1, 65534, 1});
  CHECK(t.cum[0] == 0);
  CHECK(t.cum[1] == 1);
  CHECK(t.cum[3] == 65536);
}
