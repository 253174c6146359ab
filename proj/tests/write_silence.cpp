// Writes `seconds` of digital silence as a 16 kHz mono 16-bit WAV.
#include <cstdlib>
#include <iostream>

#include "uit/dsp.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: write_silence <out.wav> <seconds>\n";
    return 2;
  }
  const double seconds = std::atof(argv[2]);
  uit::Waveform w{std::vector<float>(static_cast<std::size_t>(seconds * uit::kSampleRate), 0.0f)};
  uit::write_wav16(argv[1], w);
  return 0;
}
