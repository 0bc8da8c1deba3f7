//! Hand-built records for unit tests.

use crate::model::{
    Action, ArmLabels, AssignmentPath, AssignmentStep, Classification, ObservedTrajectory, Response, TrialRecord,
    VariableId, Week,
};

/// Record whose `app` variable is constant at `app` for 10 weeks (so every
/// aggregation window has mean rate `app`) and `noise` is constant at 1.
pub fn record(id: usize, app: f64, y: f64) -> TrialRecord {
    TrialRecord {
        participant_id: id,
        arms: ArmLabels::default(),
        trajectory: ObservedTrajectory::new(vec![
            (VariableId::new("app").unwrap(), vec![app; 10]),
            (VariableId::new("noise").unwrap(), vec![1.0; 10]),
        ])
        .unwrap(),
        classification: None,
        rescued: false,
        rescue_week: None,
        rescue_option: None,
        outcome: y,
        success: y >= 0.0,
        adjusted_outcome: y,
        path: AssignmentPath::default(),
    }
}

pub fn with_cutoff_arm(mut r: TrialRecord, label: &str) -> TrialRecord {
    r.arms.cutoff = Some(label.to_string());
    r
}

pub fn rescued_at(mut r: TrialRecord, week: Week) -> TrialRecord {
    r.rescued = true;
    r.rescue_week = Some(week);
    r.rescue_option = Some("coach".into());
    r
}

pub fn classified(mut r: TrialRecord, response: Response, week: Week) -> TrialRecord {
    r.classification = Some(Classification { response, week });
    r
}

pub fn with_path(mut r: TrialRecord, steps: &[(Week, bool, f64)]) -> TrialRecord {
    r.path = AssignmentPath {
        steps: steps
            .iter()
            .map(|&(week, rescue, probability)| AssignmentStep {
                week,
                action: if rescue { Action::Rescue("coach".into()) } else { Action::Wait },
                probability,
            })
            .collect(),
    };
    r
}
