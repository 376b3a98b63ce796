#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace coda {

// A single-channel stream of samples normalized to [-1, 1].
struct SampledSignal {
    std::vector<double> samples;
    double sample_rate = 0.0;
    int channel_id = 0;
    double origin_time = 0.0;  // seconds into the source file

    [[nodiscard]] double duration() const {
        return sample_rate > 0.0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

struct AnalysisBuffer {
    SampledSignal signal;  // origin_time of the slice equals start_time
    double duration = 0.0;
    double start_time = 0.0;
};

enum class WavEncoding { pcm16, float32 };

// Reads one channel of a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit, 1-2 channels).
// Throws FormatError for anything else and ArgumentError for a channel the file lacks.
SampledSignal load_audio(const std::filesystem::path& path, int channel = 0);

// Writes interleaved channels; all channels must share length and sample rate.
void write_wav(const std::filesystem::path& path, std::span<const SampledSignal> channels,
               WavEncoding encoding = WavEncoding::float32);
void write_wav(const std::filesystem::path& path, const SampledSignal& signal,
               WavEncoding encoding = WavEncoding::float32);

// Slices a signal into buffers of buffer_len seconds advancing by buffer_len - overlap.
// The final buffer may be shorter. Requires 0 <= overlap < buffer_len.
std::vector<AnalysisBuffer> frame_buffers(const SampledSignal& signal, double buffer_len,
                                          double overlap);

}  // namespace coda
