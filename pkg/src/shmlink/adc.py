"""Emulated 24-bit sigma-delta ADC with a constant-current resistance front end.

The emulator models the acquisition chain the node firmware drives over an
in-process register bus: an addressable register file, per-channel resistance
inputs excited by a constant current, a sinc3 decimation filter applied to the
oversampled modulator stream, and the code<->resistance conversion

    code = round(R * I_exc / Vref * 2^24)        (clamped to 24 bits)
    R    = code * 2.5 / 16777216 / 0.001         (this exact operation order)

Writing a CHANNEL register with its enable bit set arms a conversion; the
conversion completes while the STATUS register is being polled, after which
the DATA register holds the filtered, quantized code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

VREF = 2.5
RESOLUTION = 1 << 24       # 24-bit full scale
MAX_CODE = RESOLUTION - 1
DEFAULT_EXCITATION = 0.001  # ampere

# Register addresses
STATUS = 0x00
ADC_CONTROL = 0x01
DATA = 0x02
IO_CONTROL_1 = 0x03
CHANNEL_ADDRS = (0x09, 0x0B, 0x0D, 0x0F, 0x11, 0x13, 0x15, 0x17)
CONFIG_0 = 0x19
FILTER_0 = 0x21

WRITABLE_ADDRS = frozenset((ADC_CONTROL, IO_CONTROL_1, CONFIG_0, FILTER_0) + CHANNEL_ADDRS)
READONLY_ADDRS = frozenset((STATUS, DATA))
KNOWN_ADDRS = WRITABLE_ADDRS | READONLY_ADDRS

CHANNEL_ENABLE_BIT = 0x8000  # bit 15 of a CHANNEL register arms the channel
STATUS_RDY_BIT = 0x80        # bit 7 of STATUS: 1 = no valid DATA yet


class BusError(Exception):
    """Base class for register-bus level failures."""


class UnknownRegister(BusError):
    def __init__(self, addr: int):
        super().__init__(f"unknown register 0x{addr:02X}")
        self.addr = addr


class ReadOnlyRegister(BusError):
    def __init__(self, addr: int):
        super().__init__(f"register 0x{addr:02X} is read-only")
        self.addr = addr


class DataNotReady(BusError):
    """DATA was read while a conversion is still in flight."""


class ChannelNotArmed(BusError):
    def __init__(self, channel: int):
        super().__init__(f"channel {channel} is not armed")
        self.channel = channel


class ExcitationOff(BusError):
    """A conversion was requested with the excitation current disabled."""


class CodeOutOfRange(ValueError):
    def __init__(self, code: int):
        super().__init__(f"code {code} outside [0, {RESOLUTION})")
        self.code = code


def resistance_to_code(r: float, excitation: float = DEFAULT_EXCITATION) -> int:
    """Quantize a resistance (ohm) to a 24-bit code.

    Rounds half away from zero and clamps to [0, 2^24 - 1]; out-of-range
    inputs saturate like a physical converter, they never fail.
    """
    x = r * excitation / VREF * RESOLUTION
    code = math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)
    return min(max(code, 0), MAX_CODE)


def code_to_resistance(code: int, excitation: float = DEFAULT_EXCITATION) -> float:
    """Convert a 24-bit code back to ohms.

    Evaluates ``code * 2.5 / 16777216 / excitation`` in exactly that order,
    matching the firmware's two-step voltage-then-resistance arithmetic.
    """
    if not 0 <= code < RESOLUTION:
        raise CodeOutOfRange(code)
    return code * VREF / RESOLUTION / excitation


@dataclass
class ChannelInput:
    """True signal on one channel: resistance plus optional disturbances.

    ``noise_std`` is the std of white Gaussian resistance noise added to every
    modulator sample; the sinc3 filter attenuates it at the output, as in the
    real converter.  The sinusoidal interference models mains pickup.
    """

    resistance: float = 0.0
    noise_std: float = 0.0
    interference_amplitude: float = 0.0
    interference_freq: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass
class SensorModel:
    """Per-channel inputs plus the excitation/reference electrical model.

    Representable resistance spans [0, Vref/I_exc) = [0, 2500) ohm at the
    default 1 mA excitation; values outside clamp to the nearest code.
    """

    channels: list[ChannelInput] = field(default_factory=lambda: [ChannelInput() for _ in range(8)])
    excitation: float = DEFAULT_EXCITATION

    @classmethod
    def from_resistances(cls, resistances, noise_std: float = 0.0) -> "SensorModel":
        return cls(channels=[ChannelInput(resistance=r, noise_std=noise_std) for r in resistances])

    def set_resistance(self, channel: int, r: float) -> None:
        self.channels[channel].resistance = r

    @property
    def full_scale(self) -> float:
        return VREF / self.excitation


@dataclass(frozen=True)
class Sinc3Config:
    """Triple-boxcar decimation filter parameters.

    Spectral nulls fall at every multiple of ``output_rate`` =
    modulator_rate / decimation; the 10 Hz default therefore rejects both
    50 Hz and 60 Hz mains interference.  One settled conversion consumes a
    window of 3*decimation - 2 modulator samples.
    """

    modulator_rate: float = 19200.0
    decimation: int = 1920

    def __post_init__(self):
        if self.modulator_rate <= 0 or self.decimation < 1:
            raise ValueError("modulator_rate must be > 0 and decimation >= 1")

    @property
    def output_rate(self) -> float:
        return self.modulator_rate / self.decimation

    @property
    def window_len(self) -> int:
        return 3 * self.decimation - 2

    @property
    def settle_time(self) -> float:
        return self.window_len / self.modulator_rate

    def kernel(self) -> np.ndarray:
        """Impulse response of three cascaded boxcars, normalized to unit DC gain."""
        global _KERNEL_CACHE
        cached = _KERNEL_CACHE.get(self.decimation)
        if cached is None:
            box = np.ones(self.decimation)
            w = np.convolve(np.convolve(box, box), box)
            cached = w / float(self.decimation) ** 3
            _KERNEL_CACHE[self.decimation] = cached
        return cached

    def frequency_response(self, f: float) -> float:
        """|H(f)| of the triple boxcar at modulator rate fs: |sin(pi f N/fs) / (N sin(pi f/fs))|^3."""
        if f == 0.0:
            return 1.0
        fs, n = self.modulator_rate, self.decimation
        den = n * math.sin(math.pi * f / fs)
        if den == 0.0:
            return 1.0  # alias of DC
        return abs(math.sin(math.pi * f * n / fs) / den) ** 3


_KERNEL_CACHE: dict[int, np.ndarray] = {}


class AdcEmulator:
    """Register-level emulation of the 8-channel sigma-delta converter.

    Single-threaded per instance.  The host sets the signal clock with
    :meth:`set_time`; conversions triggered through the register interface
    complete after ``polls_to_ready`` STATUS reads and consume one filter
    window of signal ending at the internal clock, which then advances by the
    window's duration so back-to-back channel scans see consecutive signal.
    """

    def __init__(self, sensors: SensorModel | None = None,
                 filter_config: Sinc3Config | None = None,
                 seed: int | None = None, polls_to_ready: int = 2):
        self.sensors = sensors if sensors is not None else SensorModel()
        self.filter_config = filter_config if filter_config is not None else Sinc3Config()
        self.polls_to_ready = polls_to_ready
        self._rng = np.random.default_rng(seed)
        self._now = 0.0
        self.reset()

    # -- power / clock -------------------------------------------------------

    def reset(self) -> None:
        """Power-on state: all registers zero, no conversion pending, RDY=1."""
        self.registers = {addr: 0 for addr in KNOWN_ADDRS}
        self._rdy = 1
        self._pending_channel: int | None = None
        self._polls_left = 0

    def set_time(self, now: float) -> None:
        """Position the signal clock (seconds); conversions sample up to it."""
        self._now = now

    @property
    def rdy(self) -> int:
        """1 while no valid DATA is available, 0 once a conversion completed."""
        return self._rdy

    # -- register bus ---------------------------------------------------------

    def write_register(self, addr: int, value: int) -> None:
        if not 0 <= addr <= 0xFF:
            raise UnknownRegister(addr)
        if addr in READONLY_ADDRS:
            raise ReadOnlyRegister(addr)
        if addr not in WRITABLE_ADDRS:
            raise UnknownRegister(addr)
        if not 0 <= value <= 0xFFFFFF:
            raise ValueError(f"register value 0x{value:X} exceeds 24 bits")
        self.registers[addr] = value
        if addr in CHANNEL_ADDRS:
            channel = CHANNEL_ADDRS.index(addr)
            if value & CHANNEL_ENABLE_BIT:
                self._arm(channel)
            elif self._pending_channel == channel:
                self._pending_channel = None  # disarm cancels the pending conversion
                self._polls_left = 0

    def read_register(self, addr: int) -> int:
        if addr not in KNOWN_ADDRS:
            raise UnknownRegister(addr)
        if addr == STATUS:
            self._poll()
            return (STATUS_RDY_BIT if self._rdy else 0) | (self._pending_channel or 0)
        if addr == DATA and self._pending_channel is not None:
            raise DataNotReady("conversion in flight")
        return self.registers[addr]

    # -- conversion ------------------------------------------------------------

    def sample_channel(self, channel: int, now: float) -> int:
        """Run one conversion on an armed channel, sampling signal up to ``now``.

        Returns the 24-bit code also latched into DATA; RDY transitions 1 -> 0.
        """
        self.set_time(now)
        self._check_armed(channel)
        return self._convert(channel)

    def _arm(self, channel: int) -> None:
        self._pending_channel = channel
        self._polls_left = self.polls_to_ready
        self._rdy = 1

    def _poll(self) -> None:
        if self._pending_channel is None:
            return
        self._polls_left -= 1
        if self._polls_left <= 0:
            self._convert(self._pending_channel)

    def _check_armed(self, channel: int) -> None:
        if not 0 <= channel < len(CHANNEL_ADDRS):
            raise ChannelNotArmed(channel)
        if not self.registers[CHANNEL_ADDRS[channel]] & CHANNEL_ENABLE_BIT:
            raise ChannelNotArmed(channel)

    def _convert(self, channel: int) -> int:
        if not self.registers[IO_CONTROL_1] & 0xFF00:
            raise ExcitationOff("IO_CONTROL_1 excitation bits are clear")
        ch = self.sensors.channels[channel]
        kernel = self.filter_config.kernel()
        n = kernel.size
        if ch.interference_amplitude != 0.0 or ch.noise_std != 0.0:
            # oversampled modulator stream ending at the current signal clock
            t = self._now - (n - 1 - np.arange(n)) / self.filter_config.modulator_rate
            signal = np.full(n, ch.resistance)
            if ch.interference_amplitude != 0.0:
                signal += ch.interference_amplitude * np.sin(2 * math.pi * ch.interference_freq * t)
            if ch.noise_std > 0.0:
                signal += self._rng.normal(0.0, ch.noise_std, n)
            filtered = float(kernel @ signal)
        else:
            filtered = ch.resistance  # DC input: unit-gain filter is exact
        code = resistance_to_code(filtered, self.sensors.excitation)
        self.registers[DATA] = code
        self._rdy = 0
        self._pending_channel = None
        self._polls_left = 0
        self._now += self.filter_config.settle_time
        return code
