#include "cdraw/arith.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cdraw/error.h"

namespace cdraw {
namespace {

constexpr uint64_t kHalf = 0x80000000ull;
constexpr uint64_t kQuarter = 0x40000000ull;
constexpr uint64_t kThreeQuarters = 0xC0000000ull;

}  // namespace

void BitWriter::put_bit(int bit) {
  cur_ = static_cast<uint8_t>((cur_ << 1) | (bit & 1));
  ++bit_count_;
  if (++fill_ == 8) {
    bytes_.push_back(static_cast<char>(cur_));
    cur_ = 0;
    fill_ = 0;
  }
}

std::string BitWriter::bytes() const {
  std::string out = bytes_;
  if (fill_ > 0) out.push_back(static_cast<char>(cur_ << (8 - fill_)));
  return out;
}

BitReader::BitReader(const std::string& bytes, size_t grace)
    : bytes_(bytes), limit_(bytes.size() * 8 + grace) {}

int BitReader::get_bit() {
  if (pos_ >= bytes_.size() * 8) {
    if (pos_ >= limit_) {
      throw CorruptStream("bit stream exhausted at bit " +
                          std::to_string(pos_) + " (payload holds " +
                          std::to_string(bytes_.size() * 8) + " bits)");
    }
    ++pos_;
    return 0;
  }
  const int bit = (static_cast<uint8_t>(bytes_[pos_ / 8]) >> (7 - pos_ % 8)) & 1;
  ++pos_;
  return bit;
}

FreqTable FreqTable::from(std::vector<uint32_t> counts) {
  if (counts.empty()) throw ContractError("frequency table has no symbols");
  FreqTable t;
  t.cum.resize(counts.size() + 1);
  t.cum[0] = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      throw ContractError("frequency table has a zero count at symbol " +
                          std::to_string(i));
    }
    t.cum[i + 1] = t.cum[i] + counts[i];
  }
  if (t.cum.back() != kFreqTotal) {
    throw ContractError("frequency table sums to " +
                        std::to_string(t.cum.back()) + ", expected " +
                        std::to_string(kFreqTotal));
  }
  t.freq = std::move(counts);
  return t;
}

void ArithEncoder::emit(int bit) {
  writer_.put_bit(bit);
  while (pending_ > 0) {
    writer_.put_bit(!bit);
    --pending_;
  }
}

void ArithEncoder::encode(int symbol, const FreqTable& table) {
  if (symbol < 0 || symbol >= table.size()) {
    throw ContractError("symbol " + std::to_string(symbol) +
                        " outside table of " + std::to_string(table.size()) +
                        " entries");
  }
  const uint64_t range = high_ - low_ + 1;
  high_ = low_ + range * table.cum[symbol + 1] / FreqTable::kFreqTotal - 1;
  low_ = low_ + range * table.cum[symbol] / FreqTable::kFreqTotal;
  for (;;) {
    if (high_ < kHalf) {
      emit(0);
    } else if (low_ >= kHalf) {
      emit(1);
      low_ -= kHalf;
      high_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      ++pending_;
      low_ -= kQuarter;
      high_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1;
  }
  ideal_bits_ += 16.0 - std::log2(static_cast<double>(table.freq[symbol]));
}

std::string ArithEncoder::finish() {
  ++pending_;
  emit(low_ < kQuarter ? 0 : 1);
  return writer_.bytes();
}

ArithDecoder::ArithDecoder(const std::string& payload) : reader_(payload) {
  for (int i = 0; i < 32; ++i) value_ = (value_ << 1) | reader_.get_bit();
}

int ArithDecoder::decode(const FreqTable& table) {
  const uint64_t range = high_ - low_ + 1;
  const uint64_t scaled =
      ((value_ - low_ + 1) * FreqTable::kFreqTotal - 1) / range;
  const auto it = std::upper_bound(table.cum.begin() + 1, table.cum.end(),
                                   static_cast<uint32_t>(scaled));
  const int symbol = static_cast<int>(it - table.cum.begin()) - 1;
  high_ = low_ + range * table.cum[symbol + 1] / FreqTable::kFreqTotal - 1;
  low_ = low_ + range * table.cum[symbol] / FreqTable::kFreqTotal;
  for (;;) {
    if (high_ < kHalf) {
      // nothing to subtract
    } else if (low_ >= kHalf) {
      low_ -= kHalf;
      high_ -= kHalf;
      value_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      low_ -= kQuarter;
      high_ -= kQuarter;
      value_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1;
    value_ = (value_ << 1) | reader_.get_bit();
  }
  return symbol;
}

}  // namespace cdraw
