#include "coda/audio.hpp"

#include "coda/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace coda {
namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

struct FmtChunk {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t bits = 0;
    std::uint16_t block_align = 0;
};

}  // namespace

SampledSignal load_audio(const std::filesystem::path& path, int channel) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes(std::filesystem::file_size(path));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("short read from " + path.string());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError(path.string() + ": not a RIFF/WAVE file");
    }

    FmtChunk fmt;
    bool have_fmt = false;
    const std::uint8_t* data = nullptr;
    std::size_t data_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* hdr = bytes.data() + pos;
        const std::uint32_t size = read_u32(hdr + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (avail < 16) throw FormatError(path.string() + ": truncated fmt chunk");
            const std::uint8_t* f = bytes.data() + body;
            fmt.format = read_u16(f);
            fmt.channels = read_u16(f + 2);
            fmt.sample_rate = read_u32(f + 4);
            fmt.block_align = read_u16(f + 12);
            fmt.bits = read_u16(f + 14);
            if (fmt.format == kFormatExtensible) {
                if (avail < 26) throw FormatError(path.string() + ": truncated extensible fmt");
                fmt.format = read_u16(f + 24);  // first two bytes of the subformat GUID
            }
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = bytes.data() + body;
            data_size = avail;
        }
        pos = body + size + (size & 1u);
    }

    if (!have_fmt || data == nullptr) throw FormatError(path.string() + ": missing fmt or data chunk");
    const bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
    const bool f32 = fmt.format == kFormatFloat && fmt.bits == 32;
    if (!pcm16 && !f32) {
        throw FormatError(path.string() + ": unsupported encoding (format " +
                          std::to_string(fmt.format) + ", " + std::to_string(fmt.bits) +
                          " bit); only PCM16 and float32 are accepted");
    }
    if (fmt.channels < 1 || fmt.channels > 2) {
        throw FormatError(path.string() + ": " + std::to_string(fmt.channels) +
                          " channels; only mono and stereo are accepted");
    }
    if (fmt.sample_rate == 0) throw FormatError(path.string() + ": zero sample rate");
    if (channel < 0 || channel >= fmt.channels) {
        throw ArgumentError("channel " + std::to_string(channel) + " requested but " +
                            path.string() + " has " + std::to_string(fmt.channels));
    }

    const std::size_t bytes_per_sample = fmt.bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
    const std::size_t frames = data_size / frame_bytes;
    if (frames == 0) throw FormatError(path.string() + ": no samples");

    SampledSignal out;
    out.sample_rate = static_cast<double>(fmt.sample_rate);
    out.channel_id = channel;
    out.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const std::uint8_t* p = data + i * frame_bytes + static_cast<std::size_t>(channel) * bytes_per_sample;
        if (pcm16) {
            const auto v = static_cast<std::int16_t>(read_u16(p));
            out.samples[i] = static_cast<double>(v) / 32768.0;
        } else {
            float v;
            std::memcpy(&v, p, sizeof v);
            out.samples[i] = static_cast<double>(v);
        }
    }
    if (f32) {
        // Float files may exceed full scale; rescale rather than clip.
        double peak = 0.0;
        for (double v : out.samples) peak = std::max(peak, std::abs(v));
        if (!std::isfinite(peak)) throw FormatError(path.string() + ": non-finite samples");
        if (peak > 1.0) {
            for (double& v : out.samples) v /= peak;
        }
    }
    return out;
}

void write_wav(const std::filesystem::path& path, std::span<const SampledSignal> channels,
               WavEncoding encoding) {
    if (channels.empty() || channels.size() > 2) throw ArgumentError("write_wav: 1 or 2 channels required");
    const std::size_t frames = channels[0].samples.size();
    const double rate = channels[0].sample_rate;
    for (const auto& c : channels) {
        if (c.samples.size() != frames || c.sample_rate != rate) {
            throw ArgumentError("write_wav: channels differ in length or sample rate");
        }
    }
    if (rate <= 0.0 || rate != std::floor(rate)) throw ArgumentError("write_wav: sample rate must be a positive integer");

    const auto n_ch = static_cast<std::uint16_t>(channels.size());
    const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
    const std::uint16_t block_align = static_cast<std::uint16_t>(n_ch * bits / 8);
    const auto data_bytes = static_cast<std::uint32_t>(frames * block_align);

    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_bytes);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
    put_u16(out, n_ch);
    put_u32(out, static_cast<std::uint32_t>(rate));
    put_u32(out, static_cast<std::uint32_t>(rate) * block_align);
    put_u16(out, block_align);
    put_u16(out, bits);
    put_tag(out, "data");
    put_u32(out, data_bytes);

    for (std::size_t i = 0; i < frames; ++i) {
        for (const auto& c : channels) {
            const double v = std::clamp(c.samples[i], -1.0, 1.0);
            if (encoding == WavEncoding::pcm16) {
                const long q = std::lround(v * 32768.0);
                put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
            } else {
                const auto f = static_cast<float>(v);
                std::uint32_t bitsv;
                std::memcpy(&bitsv, &f, sizeof bitsv);
                put_u32(out, bitsv);
            }
        }
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("short write to " + path.string());
}

void write_wav(const std::filesystem::path& path, const SampledSignal& signal, WavEncoding encoding) {
    write_wav(path, std::span<const SampledSignal>(&signal, 1), encoding);
}

std::vector<AnalysisBuffer> frame_buffers(const SampledSignal& signal, double buffer_len,
                                          double overlap) {
    if (!(buffer_len > 0.0)) throw ArgumentError("frame_buffers: buffer_len must be positive");
    if (overlap < 0.0 || overlap >= buffer_len) {
        throw ArgumentError("frame_buffers: overlap must satisfy 0 <= overlap < buffer_len");
    }
    if (signal.samples.empty() || signal.sample_rate <= 0.0) {
        throw ArgumentError("frame_buffers: empty signal");
    }

    const double fs = signal.sample_rate;
    const auto total = signal.samples.size();
    const auto len = static_cast<std::size_t>(std::llround(buffer_len * fs));
    const auto hop = static_cast<std::size_t>(std::llround((buffer_len - overlap) * fs));
    if (len == 0 || hop == 0) throw ArgumentError("frame_buffers: buffer shorter than one sample");

    std::vector<AnalysisBuffer> out;
    for (std::size_t start = 0;; start += hop) {
        const std::size_t end = std::min(total, start + len);
        AnalysisBuffer b;
        b.start_time = signal.origin_time + static_cast<double>(start) / fs;
        b.signal.sample_rate = fs;
        b.signal.channel_id = signal.channel_id;
        b.signal.origin_time = b.start_time;
        b.signal.samples.assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(start),
                                signal.samples.begin() + static_cast<std::ptrdiff_t>(end));
        b.duration = static_cast<double>(end - start) / fs;
        out.push_back(std::move(b));
        if (end >= total) break;
    }
    return out;
}

}  // namespace coda
