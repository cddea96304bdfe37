#ifndef CDRAW_ARITH_H_
#define CDRAW_ARITH_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cdraw {

// MSB-first bit sink. bytes() zero-pads the final partial byte.
class BitWriter {
 public:
  void put_bit(int bit);
  size_t bit_count() const { return bit_count_; }
  std::string bytes() const;

 private:
  std::string bytes_;
  size_t bit_count_ = 0;
  uint8_t cur_ = 0;
  int fill_ = 0;
};

// MSB-first bit source. Supplies up to `grace` zero bits past the end of the
// buffer (the decoder's lookahead window legitimately runs past the payload),
// then throws CorruptStream.
class BitReader {
 public:
  explicit BitReader(const std::string& bytes, size_t grace = 32);
  int get_bit();
  size_t bits_consumed() const { return pos_; }

 private:
  std::string bytes_;
  size_t pos_ = 0;
  size_t limit_;
};

// Integer frequency table for one coded symbol. Every count is at least 1 and
// the counts sum to exactly kFreqTotal, so cumulative bounds fit in 16 bits.
struct FreqTable {
  static constexpr uint32_t kFreqTotal = 1u << 16;

  std::vector<uint32_t> freq;
  std::vector<uint32_t> cum;  // size freq.size() + 1, cum.back() == kFreqTotal

  static FreqTable from(std::vector<uint32_t> counts);
  int size() const { return static_cast<int>(freq.size()); }
};

// Arithmetic coder over 32-bit integer intervals with 16-bit frequencies.
// Underflow (the near-half straddle) is handled by deferring opposite bits
// until the next decided bit, which also performs carry propagation.
class ArithEncoder {
 public:
  void encode(int symbol, const FreqTable& table);
  // Flushes the final interval. After this the encoder is spent.
  std::string finish();
  size_t bit_count() const { return writer_.bit_count(); }
  // Sum of -log2(freq/kFreqTotal) over encoded symbols; the payload is
  // guaranteed to stay within 32 bits of this.
  double ideal_bits() const { return ideal_bits_; }

 private:
  void emit(int bit);

  BitWriter writer_;
  uint64_t low_ = 0;
  uint64_t high_ = 0xFFFFFFFFull;
  uint64_t pending_ = 0;
  double ideal_bits_ = 0.0;
};

class ArithDecoder {
 public:
  explicit ArithDecoder(const std::string& payload);
  int decode(const FreqTable& table);

 private:
  BitReader reader_;
  uint64_t low_ = 0;
  uint64_t high_ = 0xFFFFFFFFull;
  uint64_t value_ = 0;
};

}  // namespace cdraw

#endif  // CDRAW_ARITH_H_
