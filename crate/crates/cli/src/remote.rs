use anyhow::Result;
use clap::{Subcommand, ValueEnum};
use ics_client::Client;
use ics_core::matcher::Attributes;
use ics_core::service::Outcome;
use serde_json::Value;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OutcomeArg {
    Accepted,
    Rejected,
    Manual,
}

impl From<OutcomeArg> for Outcome {
    fn from(o: OutcomeArg) -> Self {
        match o {
            OutcomeArg::Accepted => Outcome::Accepted,
            OutcomeArg::Rejected => Outcome::Rejected,
            OutcomeArg::Manual => Outcome::Manual,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum ClientCommand {
    Health,
    /// Open a session, optionally with a JSON object of aspect attributes.
    Open {
        #[arg(long)]
        attributes: Option<String>,
    },
    /// Send one customer utterance and print the recommendation.
    Say {
        #[arg(long)]
        session: String,
        text: String,
    },
    Feedback {
        #[arg(long)]
        session: String,
        #[arg(long)]
        turn: usize,
        #[arg(long, value_enum)]
        outcome: OutcomeArg,
        #[arg(long)]
        scenario: Option<String>,
    },
    Close {
        #[arg(long)]
        session: String,
        #[arg(long)]
        resolved: bool,
    },
    Metrics,
    Catalog,
}

pub async fn run(url: &str, command: &ClientCommand) -> Result<Value> {
    let c = Client::new(url);
    Ok(match command {
        ClientCommand::Health => serde_json::to_value(c.health().await?)?,
        ClientCommand::Open { attributes } => {
            let attributes: Option<Attributes> = attributes.as_deref().map(serde_json::from_str).transpose()?;
            serde_json::to_value(c.open_session(attributes).await?)?
        }
        ClientCommand::Say { session, text } => serde_json::to_value(c.utterance(session, text).await?)?,
        ClientCommand::Feedback { session, turn, outcome, scenario } => {
            serde_json::to_value(c.feedback(session, *turn, (*outcome).into(), scenario.clone().map(Into::into)).await?)?
        }
        ClientCommand::Close { session, resolved } => serde_json::to_value(c.close_session(session, *resolved).await?)?,
        ClientCommand::Metrics => serde_json::to_value(c.metrics().await?)?,
        ClientCommand::Catalog => serde_json::to_value(c.catalog().await?)?,
    })
}
