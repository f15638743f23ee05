// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spdmsim
{

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_view(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline Bytes to_bytes(std::string_view s)
{
    return {s.begin(), s.end()};
}

inline void append(Bytes& out, ByteView data)
{
    out.insert(out.end(), data.begin(), data.end());
}

std::string to_hex(ByteView data);
// Throws Error(InvalidArgument) on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

// Overwrites the buffer in a way the optimizer may not elide, then clears it.
void secure_wipe(Bytes& data) noexcept;

} // namespace spdmsim
