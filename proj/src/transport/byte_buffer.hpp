#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace hybsim::transport {

// Contiguous FIFO of bytes with amortized O(1) front consumption.
class ByteBuffer {
public:
    std::size_t size() const { return data_.size() - head_; }
    bool empty() const { return size() == 0; }

    void append(std::span<const std::uint8_t> bytes) { data_.insert(data_.end(), bytes.begin(), bytes.end()); }

    // View of `n` bytes starting `offset` bytes past the front.
    std::span<const std::uint8_t> view(std::size_t offset, std::size_t n) const {
        return {data_.data() + head_ + offset, n};
    }
    std::span<const std::uint8_t> front(std::size_t n) const { return view(0, n); }

    void consume(std::size_t n) {
        head_ += n;
        if (head_ == data_.size()) {
            data_.clear();
            head_ = 0;
        } else if (head_ >= 65536 && head_ * 2 >= data_.size()) {
            data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(head_));
            head_ = 0;
        }
    }

    std::size_t read(std::span<std::uint8_t> out) {
        const std::size_t n = out.size() < size() ? out.size() : size();
        if (n > 0) std::memcpy(out.data(), data_.data() + head_, n);
        consume(n);
        return n;
    }

private:
    std::vector<std::uint8_t> data_;
    std::size_t head_ = 0;
};

} // namespace hybsim::transport
