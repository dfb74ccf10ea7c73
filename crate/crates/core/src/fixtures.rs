//! Golden fixtures F1 to F5, embedded from `fixtures/`.
//!
//! - F1: three strictly layered modules `ui`/`app`/`data`, conformant.
//! - F2: F1 plus one upward dependency `data.Store -> ui.Login`.
//! - F3: `data.Cache` depends on two `app` entities; `allow:data->app` is locked.
//! - F4: three `a` entities depend on `b.f` with no rules (deny by default).
//! - F5: `a.x -> b.v` is unsanctioned and `allow:a->b` is locked, while `d`
//!   may use `a`. The cheapest repair first makes things worse.

use crate::model::{load_architecture, load_implementation, SystemState};

macro_rules! fixture {
    ($name:ident, $dir:literal) => {
        pub fn $name() -> SystemState {
            let a = load_architecture(include_str!(concat!("../fixtures/", $dir, "/architecture.json")))
                .expect(concat!("fixture ", $dir, " architecture"));
            let s = load_implementation(include_str!(concat!("../fixtures/", $dir, "/implementation.json")))
                .expect(concat!("fixture ", $dir, " implementation"));
            SystemState::new(a, s).expect(concat!("fixture ", $dir, " pairing"))
        }
    };
}

fixture!(f1, "f1");
fixture!(f2, "f2");
fixture!(f3, "f3");
fixture!(f4, "f4");
fixture!(f5, "f5");

/// Looks a fixture up by name (`"f1"` .. `"f5"`, case-insensitive).
pub fn by_name(name: &str) -> Option<SystemState> {
    match name.to_ascii_lowercase().as_str() {
        "f1" => Some(f1()),
        "f2" => Some(f2()),
        "f3" => Some(f3()),
        "f4" => Some(f4()),
        "f5" => Some(f5()),
        _ => None,
    }
}
