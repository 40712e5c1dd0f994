/// Numerical Recipes LCG constants, modulus 2^32.
pub const LCG_MULTIPLIER: u32 = 1_664_525;
pub const LCG_INCREMENT: u32 = 1_013_904_223;

/// One step of the default generator: returns the new state, which is also
/// the output value.
pub fn rand_lcg(state: u32) -> (u32, u32) {
    let next = state
        .wrapping_mul(LCG_MULTIPLIER)
        .wrapping_add(LCG_INCREMENT);
    (next, next)
}

/// Per-thread 32-bit LCG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lcg {
    pub state: u32,
    multiplier: u32,
    increment: u32,
}

impl Lcg {
    pub fn new(state: u32) -> Self {
        Lcg::with_constants(state, LCG_MULTIPLIER, LCG_INCREMENT)
    }

    pub fn with_constants(state: u32, multiplier: u32, increment: u32) -> Self {
        Lcg {
            state,
            multiplier,
            increment,
        }
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(self.multiplier)
            .wrapping_add(self.increment);
        self.state
    }
}

/// Initial LCG state of the thread at global id `(x, y)`.
pub fn thread_seed(x: u32, y: u32, total_width: u32, u_seed: u32, mix: super::SeedMix) -> u32 {
    let linear = y.wrapping_mul(total_width).wrapping_add(x);
    match mix {
        super::SeedMix::Xor => linear ^ u_seed,
        super::SeedMix::Add => linear.wrapping_add(u_seed),
    }
}
