/// Basketball event vocabulary, in the fixed column order of event matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    NoAction = 0,
    FreeThrow = 1,
    ShotAttempt = 2,
    Pass = 3,
    Deflection = 4,
    Block = 5,
    Rebound = 6,
    Steal = 7,
    Dribble = 8,
}

pub const N_EVENTS: usize = 9;

pub const EVENT_NAMES: [&str; N_EVENTS] = [
    "no_action",
    "free_throw",
    "shot_attempt",
    "pass",
    "deflection",
    "block",
    "rebound",
    "steal",
    "dribble",
];

impl EventKind {
    pub const ALL: [EventKind; N_EVENTS] = [
        EventKind::NoAction,
        EventKind::FreeThrow,
        EventKind::ShotAttempt,
        EventKind::Pass,
        EventKind::Deflection,
        EventKind::Block,
        EventKind::Rebound,
        EventKind::Steal,
        EventKind::Dribble,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        EVENT_NAMES[self.index()]
    }
}

/// Events of which at most one may be active for a player at a timestep.
pub const EXCLUSIVE: [EventKind; 3] = [EventKind::ShotAttempt, EventKind::Pass, EventKind::Steal];
