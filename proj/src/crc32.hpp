#pragma once

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320) used as the integrity
// footer of the binary file formats. Check value: crc32("123456789") =
// 0xCBF43926.

#include <array>
#include <cstddef>
#include <cstdint>

namespace ad {

namespace detail {
inline const std::array<uint32_t, 256>& crc32_table() {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}
}  // namespace detail

class Crc32 {
public:
    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        const auto& table = detail::crc32_table();
        for (size_t i = 0; i < len; ++i) state_ = table[(state_ ^ p[i]) & 0xFF] ^ (state_ >> 8);
    }
    uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

private:
    uint32_t state_ = 0xFFFFFFFFu;
};

inline uint32_t crc32(const void* data, size_t len) {
    Crc32 c;
    c.update(data, len);
    return c.value();
}

}  // namespace ad
