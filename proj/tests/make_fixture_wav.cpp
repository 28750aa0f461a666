// make_fixture_wav OUT SECONDS FREQ_HZ [RATE]
// Writes a mono 16-bit sine; FREQ_HZ 0 gives silence.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>

#include "sedkit/audio.hpp"

int main(int argc, char** argv) {
  if (argc < 4 || argc > 5) {
    std::fprintf(stderr, "usage: make_fixture_wav OUT SECONDS FREQ_HZ [RATE]\n");
    return 2;
  }
  try {
    sedkit::Waveform w;
    w.sample_rate = argc == 5 ? static_cast<std::uint32_t>(std::atoi(argv[4])) : 16000u;
    const double seconds = std::atof(argv[2]), freq = std::atof(argv[3]);
    w.samples.resize(static_cast<std::size_t>(seconds * w.sample_rate));
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = static_cast<float>(0.3 * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / w.sample_rate));
    sedkit::save_wav(argv[1], w);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "make_fixture_wav: %s\n", e.what());
    return 1;
  }
  return 0;
}
